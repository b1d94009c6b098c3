"""Acceptance checks; each prints one PASS/FAIL line (also repeated in the terminal summary)."""

import contextlib
import json
import time

import numpy as np
from scipy.stats import chisquare

from conftest import ACCEPTANCE, make_sources
from oracles import ap_pairwise, auc_pairwise, central_difference, compress_straight_line, relative_error
from zsvad.config import PipelineConfig
from zsvad.cli import main
from zsvad.decoder import DecoderWeights, decode, dice_loss, focal_loss
from zsvad.encoders import VisionFeatures
from zsvad.exposure_sampler import SamplerConfig, build_exposure_dataset
from zsvad.metrics import EvalRecord, average_precision, pixel_auc, roc_auc
from zsvad.nn import Attention
from zsvad.numerics import Rng
from zsvad.pipeline import run_detect, run_eval, run_synth
from zsvad.projector import ProjectorWeights, project
from zsvad.tensor_io import write_matrix
from zsvad.token_compression import CompressionConfig, TokenSet, compress, local_density


@contextlib.contextmanager
def criterion(number, title):
    detail = {"text": ""}
    try:
        yield detail
    except BaseException:
        ACCEPTANCE[number] = (False, title, detail["text"] or "assertion failed")
        print(f"[FAIL] {number}. {title}: {detail['text']}")
        raise
    ACCEPTANCE[number] = (True, title, detail["text"])
    print(f"[PASS] {number}. {title}: {detail['text']}")


def test_01_compression_matches_oracle():
    with criterion(1, "compression equals straight-line oracle") as d:
        r = np.random.default_rng(2024)
        cases = []
        for _ in range(200):
            k = int(r.choice([2, 4, 8]))
            ratio = float(r.choice([0.1, 0.2, 0.5]))
            n, dim = int(r.integers(k + 1, 129)), int(r.integers(1, 33))
            cases.append((r.normal(size=(n, dim)), k, ratio))
        start = time.perf_counter()
        results = [compress(TokenSet(z), CompressionConfig(k=k, ratio=ratio)) for z, k, ratio in cases]
        elapsed = time.perf_counter() - start
        worst = 0.0
        for (z, k, ratio), res in zip(cases, results):
            out, bg, density, _ = compress_straight_line(z, k, ratio)
            np.testing.assert_array_equal(res.background_indices, bg)
            np.testing.assert_allclose(res.densities, density, rtol=1e-10)
            worst = max(worst, float(np.max(np.abs(res.compressed - out))))
        d["text"] = f"200 sets, max abs diff {worst:.1e}, {elapsed:.2f}s"
        assert worst <= 1e-10 and elapsed < 10.0


def test_02_forwarded_token_count():
    with criterion(2, "forwarded tokens at ratio 0.2") as d:
        sizes = range(2, 301)
        for n in sizes:
            z = np.random.default_rng(n).normal(size=(n, 3))
            expected = max(1, (2 * n + 5) // 10)   # round-half-up of n / 5 in integers
            assert compress(TokenSet(z), CompressionConfig(k=1, ratio=0.2)).num_tokens == expected
        d["text"] = f"exact for num_tokens in 2..{sizes[-1]}"


def test_03_duplicate_tokens_are_guarded():
    with criterion(3, "duplicate tokens stay finite") as d:
        r = np.random.default_rng(3)
        guarded = 0
        for trial in range(100):
            base = r.normal(size=(int(r.integers(1, 6)), int(r.integers(1, 8))))
            z = np.repeat(base, int(r.integers(2, 12)), axis=0)
            k = int(r.integers(1, z.shape[0]))
            cfg = CompressionConfig(k=k, ratio=float(r.choice([0.1, 0.5, 1.0])))
            res = compress(TokenSet(z), cfg)
            density = local_density(TokenSet(z), k, cfg.epsilon)
            guarded += int(np.sum(density == k / cfg.epsilon))
            for arr in (res.compressed, res.densities, res.attention):
                assert np.all(np.isfinite(arr))
        d["text"] = f"100 inputs, epsilon guard hit on {guarded} tokens"
        assert guarded > 0


def test_04_sampler_statistics():
    with criterion(4, "sampler statistics") as d:
        sources = make_sources(10_000, 40)
        out = build_exposure_dataset(sources, SamplerConfig(anomaly_probability=0.3, max_categories=30, seed=11))
        n = len(out)
        anomalous = sum(ex.is_anomalous for ex in out)
        sigma = np.sqrt(n * 0.3 * 0.7)
        # 39 candidate descriptions per sample, so every prompt holds its full drawn num_categories
        k_counts = np.bincount([ex.num_categories for ex in out], minlength=31)[1:]
        p_value = chisquare(k_counts).pvalue
        consistent = all(ex.is_anomalous == (ex.base.description in ex.categories)
                         == all(ex.frame_labels) for ex in out)
        d["text"] = (f"anomalous {anomalous}/{n} (3 sigma band {0.3 * n - 3 * sigma:.0f}-{0.3 * n + 3 * sigma:.0f}), "
                     f"num_categories chi-square p={p_value:.3f}, label consistency {consistent}")
        assert abs(anomalous - 0.3 * n) <= 3 * sigma
        assert p_value > 0.01 and consistent and k_counts.sum() == n
        assert SamplerConfig().max_categories == 30


def test_05_metrics_match_pairwise_oracles():
    with criterion(5, "metrics equal O(n^2) oracles") as d:
        r = np.random.default_rng(5)
        for _ in range(500):
            n = int(r.integers(2, 501))
            levels = int(r.integers(2, 60))
            s = r.integers(0, levels, size=n) / levels
            y = r.integers(0, 2, size=n)
            y[r.choice(n, 2, replace=False)] = [0, 1]
            assert roc_auc(s, y) == auc_pairwise(s, y)
            assert average_precision(s, y) == ap_pairwise(s, y)

            h, w = 2 * int(r.integers(1, 6)), 2 * int(r.integers(1, 6))
            t = int(r.integers(1, 4))
            scores = r.integers(0, levels, size=(t, h, w)) / levels
            coarse = r.integers(0, 2, size=(t, h // 2, w // 2))
            fine = coarse.repeat(2, axis=1).repeat(2, axis=2)
            if fine.min() == fine.max():
                continue
            rec = EvalRecord("v", np.zeros(t), np.zeros(t, dtype=int), scores, coarse)
            assert pixel_auc([rec]) == auc_pairwise(scores.ravel(), fine.ravel())
        d["text"] = "500 tied instances, exact equality"


def test_06_gradients_match_finite_differences():
    with criterion(6, "focal and dice gradients") as d:
        r = np.random.default_rng(6)
        worst_focal = worst_dice = 0.0
        for _ in range(25):
            shape = (int(r.integers(2, 6)), int(r.integers(2, 6)))
            x = r.normal(scale=2.0, size=shape)
            t = r.integers(0, 2, size=shape).astype(float)
            _, g = focal_loss(x, t)
            worst_focal = max(worst_focal, relative_error(g, central_difference(lambda v: focal_loss(v, t)[0], x)))
            _, g = dice_loss(x, t)
            worst_dice = max(worst_dice, relative_error(g, central_difference(lambda v: dice_loss(v, t)[0], x)))
        d["text"] = f"25 instances each, worst rel. error focal {worst_focal:.1e}, dice {worst_dice:.1e}"
        assert worst_focal < 1e-4 and worst_dice < 1e-4


def test_07_projector_decoder_invariants():
    with criterion(7, "projector/decoder invariants") as d:
        dims = dict(text_dim=6, vision_dim=5, semantic_dim=7, attn_dim=4, frame_dim=3, prompt_dim=8, num_queries=6, mlp_dim=10)
        for trial in range(100):
            r = np.random.default_rng(700 + trial)
            proj_w = ProjectorWeights.init(trial, **dims)
            dec_w = DecoderWeights.init(trial, vision_dim=5, prompt_dim=8, pixel_dim=4, mlp_dim=10)

            att = Attention.init(Rng(trial), 4, 3, 5)
            q, kv = r.normal(size=(3, 4)), r.normal(size=(6, 3))
            weights = att.weights(q, kv)
            assert np.all(weights >= 0) and np.allclose(weights.sum(axis=1), 1.0, atol=1e-12)
            values = (kv @ att.wv)
            mixed = weights @ values
            assert np.all(mixed >= values.min(axis=0) - 1e-12) and np.all(mixed <= values.max(axis=0) + 1e-12)

            sem, frame_features = r.normal(size=7), r.normal(size=(3, 5, 3))
            base = project(sem, frame_features, proj_w).prompts
            permuted = project(sem, frame_features[:, r.permutation(5)], proj_w).prompts
            assert np.max(np.abs(base - permuted)) <= 1e-12

            fv = VisionFeatures(r.normal(size=(3, 6, 5)), (2, 3))
            perm = r.permutation(3)
            a = decode(base, fv, dec_w, upsample=2)
            b = decode(base[perm], VisionFeatures(fv.features[perm], fv.patch_grid), dec_w, upsample=2)
            assert np.array_equal(b.frame_scores, a.frame_scores[perm])
            assert np.array_equal(b.pixel_scores, a.pixel_scores[perm])
            for arr in (a.frame_scores, a.pixel_scores):
                assert np.all((arr >= 0) & (arr <= 1))
        d["text"] = "100 seeded trials"


def test_08_end_to_end_synthetic(tmp_path):
    with criterion(8, "end-to-end synthetic detection") as d:
        manifest = run_synth(tmp_path / "suite", count=20, seed=0, frames=16, height=64, width=64)
        oracle = run_detect(PipelineConfig().replace("semantic", provider="oracle"), manifest, tmp_path / "oracle")
        rand = run_detect(PipelineConfig(), manifest, tmp_path / "random")
        d["text"] = (f"oracle frame AUC {oracle['frame_auc']:.4f}, pixel AUC {oracle['pixel_auc']:.4f}; "
                     f"random weights frame AUC {rand['frame_auc']:.3f}")
        assert oracle["frame_auc"] > 0.95 and oracle["pixel_auc"] > 0.90
        for key in ("frame_auc", "frame_ap", "pixel_auc"):
            assert 0.0 <= rand[key] <= 1.0
        assert rand["videos"] == 20 and rand["frames"] == 320
        written = json.loads((tmp_path / "random" / "metrics.json").read_text())
        assert written["frame_auc"] == rand["frame_auc"]


def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _run_every_subcommand(root):
    sources = make_sources(40, 12)
    (root / "sources.jsonl").write_text("".join(json.dumps(s.__dict__) + "\n" for s in sources))
    write_matrix(root / "tokens.bin", Rng(1).normals((50, 4)))
    assert main(["synth", "--output", str(root / "suite"), "--count", "3", "--frames", "4",
                 "--height", "32", "--width", "32"]) == 0
    assert main(["sample", "--input", str(root / "sources.jsonl"), "--output", str(root / "exposure.jsonl"),
                 "--max-categories", "8"]) == 0
    assert main(["compress", "--input", str(root / "tokens.bin"), "--output", str(root / "compressed.bin")]) == 0
    manifest = str(root / "suite" / "manifest.jsonl")
    assert main(["detect", "--manifest", manifest, "--output", str(root / "detect")]) == 0
    assert main(["eval", "--scores", str(root / "detect"), "--manifest", manifest,
                 "--output", str(root / "eval")]) == 0


def test_09_every_subcommand_is_deterministic(tmp_path, capsys):
    with criterion(9, "byte-identical reruns") as d:
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        _run_every_subcommand(tmp_path / "a")
        _run_every_subcommand(tmp_path / "b")
        first, second = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
        differing = [name for name in first if first[name] != second.get(name)]
        d["text"] = f"{len(first)} files from sample/compress/detect/eval/synth, {len(differing)} differ"
        assert first.keys() == second.keys() and not differing


def test_10_full_pipeline_runtime(tmp_path):
    with criterion(10, "full synthetic pipeline runtime") as d:
        start = time.perf_counter()
        manifest = run_synth(tmp_path / "suite", count=20)
        cfg = PipelineConfig()
        run_detect(cfg, manifest, tmp_path / "detect")
        run_eval(cfg, tmp_path / "detect", manifest, tmp_path / "eval")
        elapsed = time.perf_counter() - start
        d["text"] = f"synth + detect + eval on 20 scenes in {elapsed:.1f}s (single worker)"
        assert elapsed < 60.0
