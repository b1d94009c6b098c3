"""Pseudo-anomaly relabelling of segmentation samples.

Each source sample ``(frames, mask, description)`` becomes a detection
sample ``(frames, frame labels, category list)``. A random number of
descriptions borrowed from *other* samples act as irrelevant categories;
with probability ``p`` the sample's own description is mixed in and all
frames are labelled anomalous, otherwise only irrelevant categories are
prompted and all frames are normal.

Every sample gets its own generator seeded with
``splitmix64(seed ^ index)``, so samples can be processed in any order or
in parallel and still reproduce the same output.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CategoryPoolExhausted, ContractViolation, DataError
from .masks import decode_video_rle
from .numerics import Rng, splitmix64

NORMAL_PROMPTS = ("irrelevant", "own")


@dataclass(frozen=True)
class SourceSample:
    id: str
    visual_ref: str
    frames: int
    height: int
    width: int
    pixel_labels: list
    description: str

    def __post_init__(self):
        if not self.description:
            raise DataError(f"{self.id}: empty description")
        if len(self.pixel_labels) != self.frames:
            raise DataError(f"{self.id}: {len(self.pixel_labels)} mask frames for T={self.frames}")
        for rle in self.pixel_labels:
            if list(rle.get("size", ())) != [self.height, self.width]:
                raise DataError(f"{self.id}: mask size {rle.get('size')} != {[self.height, self.width]}")

    def mask(self) -> np.ndarray:
        return decode_video_rle(self.pixel_labels)

    @classmethod
    def from_dict(cls, d: dict) -> "SourceSample":
        try:
            return cls(
                id=str(d["id"]),
                visual_ref=str(d["visual_ref"]),
                frames=int(d["frames"]),
                height=int(d["height"]),
                width=int(d["width"]),
                pixel_labels=list(d["pixel_labels"]),
                description=str(d["description"]),
            )
        except KeyError as exc:
            raise DataError(f"source sample missing field {exc}") from exc


@dataclass(frozen=True)
class ExposureSample:
    base: SourceSample
    categories: list
    frame_labels: list
    is_anomalous: bool
    num_categories: int
    seed: int = 0
    index: int = 0

    def pixel_target(self) -> np.ndarray:
        """Supervision mask: the source mask if anomalous, zeros otherwise."""
        m = self.base.mask()
        return m if self.is_anomalous else np.zeros_like(m)

    def to_dict(self) -> dict:
        d = asdict(self.base)
        d.update(
            categories=list(self.categories),
            frame_labels=list(self.frame_labels),
            is_anomalous=self.is_anomalous,
            num_categories=self.num_categories,
            provenance={"seed": self.seed, "index": self.index,
                        "sub_seed": splitmix64((self.seed ^ self.index) & ((1 << 64) - 1))},
        )
        return d


@dataclass(frozen=True)
class SamplerConfig:
    anomaly_probability: float = 0.5
    max_categories: int = 30
    seed: int = 0
    normal_prompt: str = "irrelevant"

    def __post_init__(self):
        if not 0.0 <= self.anomaly_probability <= 1.0:
            raise ContractViolation(f"anomaly_probability {self.anomaly_probability} outside [0, 1]")
        if self.max_categories < 1:
            raise ContractViolation("max_categories must be >= 1")
        if self.normal_prompt not in NORMAL_PROMPTS:
            raise ContractViolation(f"normal_prompt must be one of {NORMAL_PROMPTS}")


def _distinct_descriptions(sources) -> list[str]:
    return list(dict.fromkeys(s.description for s in sources))


def _candidate_pool(sources, i: int, distinct: list[str] | None = None) -> list[str]:
    if distinct is None:
        distinct = _distinct_descriptions(sources)
    own = sources[i].description
    return [d for d in distinct if d != own]


def sample_irrelevant(sources, i: int, num_categories: int, rng: Rng, pool: list | None = None) -> list[str]:
    """Draw ``num_categories - 1`` distinct descriptions of other samples, excluding sample ``i``'s own.

    Candidates are the distinct descriptions in first-appearance order; the
    draw is uniform without replacement over that set.
    """
    if pool is None:
        pool = _candidate_pool(sources, i)
    need = num_categories - 1
    if need < 0:
        raise ContractViolation("num_categories must be >= 1")
    if need > len(pool):
        raise CategoryPoolExhausted(
            f"category pool exhausted for sample {sources[i].id!r}: need {need}, have {len(pool)}")
    return rng.sample(pool, need)


def designate(sample: SourceSample, irrelevant: list[str], p: float, rng: Rng,
              normal_prompt: str = "irrelevant", num_categories: int | None = None) -> ExposureSample:
    """Randomly label ``sample`` anomalous (probability ``p``) or normal.

    ``num_categories`` is the prompt size. Anomalous samples take
    ``num_categories - 1`` irrelevant descriptions plus their own. Normal
    samples take up to ``num_categories`` irrelevant descriptions (the
    caller may supply one spare so normal prompts keep the full size), or,
    with ``normal_prompt="own"``, only their own description.
    """
    if sample.description in irrelevant:
        raise ContractViolation("irrelevant categories include the sample's own description")
    if num_categories is None:
        num_categories = len(irrelevant) + 1
    anomalous = rng.random() < p
    if anomalous:
        cats = list(irrelevant[:num_categories - 1]) + [sample.description]
        labels = [1] * sample.frames
    elif normal_prompt == "own":
        cats = [sample.description]
        labels = [0] * sample.frames
    else:
        cats = list(irrelevant[:num_categories])
        labels = [0] * sample.frames
    rng.shuffle(cats)
    return ExposureSample(sample, cats, labels, anomalous, len(cats))


def build_exposure_dataset(sources, config: SamplerConfig) -> list[ExposureSample]:
    sources = list(sources)
    if len(sources) < 2 or len({s.description for s in sources}) < 2:
        raise DataError("need at least two sources with two distinct descriptions")
    ids = [s.id for s in sources]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample ids")
    distinct = _distinct_descriptions(sources)
    out = []
    for i, src in enumerate(sources):
        rng = Rng(splitmix64((config.seed ^ i) & ((1 << 64) - 1)))
        num_categories = 1 + rng.below(config.max_categories)
        pool = _candidate_pool(sources, i, distinct)
        if num_categories - 1 > len(pool):
            raise CategoryPoolExhausted(
                f"category pool exhausted for sample {src.id!r}: need {num_categories - 1}, have {len(pool)}")
        # one spare so a normal draw can still prompt num_categories categories
        irrelevant = rng.sample(pool, min(num_categories, len(pool)))
        ex = designate(src, irrelevant, config.anomaly_probability, rng,
                       config.normal_prompt, num_categories=num_categories)
        out.append(ExposureSample(ex.base, ex.categories, ex.frame_labels, ex.is_anomalous,
                                  ex.num_categories, seed=config.seed, index=i))
    return out


def read_sources(path) -> list[SourceSample]:
    out = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(SourceSample.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
    return out


def write_exposure(path, samples: list[ExposureSample]) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
