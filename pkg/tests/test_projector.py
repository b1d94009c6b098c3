import math

import numpy as np
import pytest

from oracles import softmax_list
from zsvad.encoders import CategoryFeatures, VisionFeatures, encode_text
from zsvad.errors import ContractViolation
from zsvad.projector import ProjectorWeights, frame_cross_attention, project

SMALL = dict(text_dim=6, vision_dim=5, semantic_dim=7, attn_dim=4, frame_dim=3, prompt_dim=8, num_queries=5, mlp_dim=10)


def features(seed, frames=2, patches=4, vision_dim=5):
    r = np.random.default_rng(seed)
    return VisionFeatures(r.normal(size=(frames, patches, vision_dim)), (1, patches))


def categories(seed, k=3, text_dim=6):
    return CategoryFeatures(np.random.default_rng(seed).normal(size=(k, text_dim)), tuple("abc"[:k]))


def test_frame_attention_matches_loops():
    w = ProjectorWeights.init(1, **SMALL)
    fv, fc = features(0), categories(1)
    got = frame_cross_attention(fc, fv, w)
    assert got.shape == (2, 3, 3)
    attn_dim = w.category_proj.shape[1]
    for t in range(2):
        keys = [fv.features[t, p] @ w.patch_proj for p in range(4)]
        for k in range(3):
            q = fc.features[k] @ w.category_proj
            a = softmax_list([float(q @ key) / math.sqrt(attn_dim) for key in keys])
            expected = sum(a[p] * keys[p] for p in range(4)) @ w.attn_out
            np.testing.assert_allclose(got[t, k], expected, atol=1e-10)


def test_single_patch_ignores_category():
    w = ProjectorWeights.init(2, **SMALL)
    fv = features(3, patches=1)
    got = frame_cross_attention(categories(4), fv, w)
    for t in range(2):
        expected = fv.features[t, 0] @ w.patch_proj @ w.attn_out
        np.testing.assert_allclose(got[t], np.repeat(expected[None], 3, axis=0), atol=1e-14)


def test_duplicate_category_duplicates_rows():
    w = ProjectorWeights.init(2, **SMALL)
    fc = categories(5)
    dup = CategoryFeatures(fc.features[[0, 1, 2, 1]], ("a", "b", "c", "b"))
    got = frame_cross_attention(dup, features(6), w)
    np.testing.assert_array_equal(got[:, 1], got[:, 3])


def test_zero_depth_is_input_independent():
    w = ProjectorWeights.init(3, depth=0, **SMALL)
    a = project(np.ones(7), np.random.default_rng(0).normal(size=(2, 3, 3)), w)
    b = project(np.zeros(7), np.random.default_rng(1).normal(size=(2, 4, 3)), w)
    expected = w.queries.mean(axis=0) @ w.out_proj + w.out_bias
    np.testing.assert_allclose(a.prompts, np.repeat(expected[None], 2, axis=0), atol=1e-14)
    np.testing.assert_array_equal(a.prompts, b.prompts)


def test_context_permutation_invariance():
    w = ProjectorWeights.init(4, **SMALL)
    r = np.random.default_rng(7)
    sem, frame_features = r.normal(size=7), r.normal(size=(3, 6, 3))
    base = project(sem, frame_features, w).prompts
    for _ in range(10):
        perm = r.permutation(6)
        np.testing.assert_allclose(project(sem, frame_features[:, perm], w).prompts, base, atol=1e-12)


def test_finite_and_deterministic_over_many_trials():
    w = ProjectorWeights.init(5, **SMALL)
    r = np.random.default_rng(8)
    for _ in range(1000):
        sem, frame_features = r.normal(size=7) * 10, r.normal(size=(1, 4, 3)) * 10
        out = project(sem, frame_features, w).prompts
        assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(project(sem, frame_features, w).prompts, out)


def test_defaults_and_shapes():
    w = ProjectorWeights.init()
    assert w.queries.shape == (48, 64) and len(w.blocks) == 2
    out = project(np.zeros(256), np.zeros((4, 2, 64)), w)
    assert out.prompts.shape == (4, 64)


def test_dimension_checks():
    w = ProjectorWeights.init(0, **SMALL)
    with pytest.raises(ContractViolation):
        project(np.ones(3), np.ones((1, 2, 3)), w)
    with pytest.raises(ContractViolation):
        project(np.ones(7), np.ones((1, 2, 4)), w)
    with pytest.raises(ContractViolation):
        frame_cross_attention(encode_text(["a"], dim=5), features(0), w)


def test_weights_save_load(tmp_path):
    w = ProjectorWeights.init(6, **SMALL)
    w.save(tmp_path / "proj")
    template = ProjectorWeights.init(99, **SMALL)
    back = ProjectorWeights.load(tmp_path / "proj", template)
    sem, frame_features = np.ones(7), np.ones((1, 2, 3))
    np.testing.assert_array_equal(project(sem, frame_features, back).prompts, project(sem, frame_features, w).prompts)
