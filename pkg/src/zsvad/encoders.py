"""Deterministic stand-ins for the vision backbone and the text encoder.

The vision encoder cuts each frame into ``P x P`` patches (edge-replicated
when ``H`` or ``W`` is not a multiple of ``P``) and applies one fixed
linear map to every flattened patch. Channel 0 of that map is the patch
mean intensity; the other channels are seeded Gaussian projections.
The encoder has no bias, so it is exactly linear in pixel values.

Features computed elsewhere (e.g. by a real backbone) can be dropped in
through :func:`load_vision_features`.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DataError
from .numerics import Rng, string_seed
from .semantic_provider import hash_embedding
from .tensor_io import read_tensor, sidecar_path, write_tensor


@dataclass(frozen=True)
class VisionFeatures:
    features: np.ndarray          # T x patches x vision_dim
    patch_grid: tuple[int, int]

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 3:
            raise ContractViolation(f"vision features must be T x patches x vision_dim, got {f.shape}")
        if self.patch_grid[0] * self.patch_grid[1] != f.shape[1]:
            raise ContractViolation(f"patch grid {self.patch_grid} != patches={f.shape[1]}")
        if not np.all(np.isfinite(f)):
            raise ContractViolation("vision features contain NaN or Inf")
        object.__setattr__(self, "features", f)

    @property
    def frames(self) -> int:
        return self.features.shape[0]

    def tokens(self) -> np.ndarray:
        """Flattened ``(T * patches) x vision_dim`` token matrix, frame-major."""
        return self.features.reshape(-1, self.features.shape[2])


@dataclass(frozen=True)
class CategoryFeatures:
    features: np.ndarray          # K x text_dim
    categories: tuple


@functools.lru_cache(maxsize=16)
def patch_projection(fan_in: int, dim: int, seed: int) -> np.ndarray:
    w = Rng(string_seed(seed, f"vision/{fan_in}/{dim}")).normals((fan_in, dim), std=1.0 / np.sqrt(fan_in))
    w[:, 0] = 1.0 / fan_in
    w.setflags(write=False)
    return w


def encode_vision(frames, patch_size: int = 16, dim: int = 64, seed: int = 0) -> VisionFeatures:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ContractViolation(f"frames must be T x C x H x W, got {x.shape}")
    t, c, h, w = x.shape
    p = patch_size
    if p < 1 or h < p or w < p or t < 1 or c < 1:
        raise ContractViolation(f"frame size {h}x{w} too small for patch size {p}")
    rows, cols = -(-h // p), -(-w // p)
    if rows * p != h or cols * p != w:
        x = np.pad(x, ((0, 0), (0, 0), (0, rows * p - h), (0, cols * p - w)), mode="edge")
    patches = x.reshape(t, c, rows, p, cols, p).transpose(0, 2, 4, 1, 3, 5).reshape(t, rows * cols, c * p * p)
    proj = patch_projection(c * p * p, dim, seed)
    return VisionFeatures(patches @ proj, (rows, cols))


def encode_text(categories, dim: int = 64, seed: int = 0) -> CategoryFeatures:
    cats = tuple(categories)
    if not cats:
        raise ContractViolation("encode_text needs at least one category")
    rows = []
    for cat in cats:
        if not cat:
            raise ContractViolation("empty category string")
        v = hash_embedding("text/" + cat, dim, seed)
        rows.append(v / np.linalg.norm(v))
    return CategoryFeatures(np.stack(rows), cats)


def save_vision_features(path, vf: VisionFeatures) -> None:
    write_tensor(path, vf.features, {"patch_grid": list(vf.patch_grid)})


def load_vision_features(path) -> VisionFeatures:
    side = sidecar_path(path)
    if not side.exists():
        raise DataError(f"{path}: feature file needs a JSON sidecar with shape and patch_grid")
    meta = json.loads(side.read_text())
    f = read_tensor(path)
    if f.ndim != 3 or "patch_grid" not in meta:
        raise DataError(f"{path}: expected T x patches x vision_dim features with a patch_grid")
    return VisionFeatures(f, tuple(meta["patch_grid"]))
