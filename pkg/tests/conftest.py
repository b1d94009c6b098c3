import numpy as np
import pytest

from zsvad.exposure_sampler import SourceSample
from zsvad.masks import encode_rle


def make_sources(n, n_descriptions, frames=1, seed=0):
    r = np.random.default_rng(seed)
    out = []
    for i in range(n):
        masks = [encode_rle(r.integers(0, 2, size=(4, 5))) for _ in range(frames)]
        out.append(SourceSample(f"s{i:05d}", f"img/{i}.png", frames, 4, 5, masks,
                                f"category {i % n_descriptions}"))
    return out


@pytest.fixture
def sources():
    return make_sources(60, 40, frames=2)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")
