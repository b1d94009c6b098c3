"""Forward-only building blocks for the projector and the mask decoder.

Parameters live in small dataclasses holding numpy arrays. A two-way
block updates a *query* stream and a *context* stream against each
other. Before attending, the stream being updated is layer-normalised;
keys and values come from the other stream unnormalised, as SAM's
two-way transformer feeds its keys. Every update is residual.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .numerics import Rng, cross_attention, row_softmax
from .tensor_io import read_matrix, sha256_file, write_matrix

LN_EPS = 1e-5


def gaussian(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normals((fan_in, fan_out), std=1.0 / np.sqrt(fan_in))


@dataclass
class LayerNorm:
    gain: np.ndarray
    bias: np.ndarray

    @classmethod
    def init(cls, dim: int) -> "LayerNorm":
        return cls(np.ones(dim), np.zeros(dim))

    def __call__(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + LN_EPS) * self.gain + self.bias


@dataclass
class Attention:
    """Single-head attention with input and output projections."""

    wq: np.ndarray  # d_q x d_h
    wk: np.ndarray  # d_kv x d_h
    wv: np.ndarray  # d_kv x d_h
    wo: np.ndarray  # d_h x d_q

    @classmethod
    def init(cls, rng: Rng, d_q: int, d_kv: int, d_h: int) -> "Attention":
        return cls(gaussian(rng, d_q, d_h), gaussian(rng, d_kv, d_h),
                   gaussian(rng, d_kv, d_h), gaussian(rng, d_h, d_q))

    def weights(self, q, kv):
        return row_softmax((q @ self.wq) @ (kv @ self.wk).T, 1.0 / np.sqrt(self.wq.shape[1]))

    def __call__(self, q, kv):
        return cross_attention(q @ self.wq, kv @ self.wk, kv @ self.wv,
                               1.0 / np.sqrt(self.wq.shape[1])) @ self.wo


@dataclass
class MLP:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, rng: Rng, dim: int, hidden: int) -> "MLP":
        return cls(gaussian(rng, dim, hidden), np.zeros(hidden), gaussian(rng, hidden, dim), np.zeros(dim))

    def __call__(self, x):
        return np.maximum(x @ self.w1 + self.b1, 0.0) @ self.w2 + self.b2


@dataclass
class TwoWayBlock:
    """Queries read the context, refine themselves, then the context reads back.

    1. ``q += Attn(LN(q), ctx)``
    2. ``q += SelfAttn(LN(q))``; ``q += MLP(LN(q))``
    3. ``ctx += Attn(LN(ctx), q)``
    """

    norm_cross: LayerNorm
    cross: Attention
    norm_self: LayerNorm
    self_attn: Attention
    norm_mlp: LayerNorm
    mlp: MLP
    norm_back: LayerNorm
    back: Attention

    @classmethod
    def init(cls, rng: Rng, d_q: int, d_ctx: int, d_h: int, mlp_dim: int) -> "TwoWayBlock":
        return cls(
            LayerNorm.init(d_q), Attention.init(rng, d_q, d_ctx, d_h),
            LayerNorm.init(d_q), Attention.init(rng, d_q, d_q, d_h),
            LayerNorm.init(d_q), MLP.init(rng, d_q, mlp_dim),
            LayerNorm.init(d_ctx), Attention.init(rng, d_ctx, d_q, d_h),
        )

    def __call__(self, q, ctx):
        q = q + self.cross(self.norm_cross(q), ctx)
        h = self.norm_self(q)
        q = q + self.self_attn(h, h)
        q = q + self.mlp(self.norm_mlp(q))
        ctx = ctx + self.back(self.norm_back(ctx), q)
        return q, ctx


def flatten_params(obj, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten nested parameter dataclasses/lists into ``{"a.b.0.c": array}``."""
    out = {}
    if isinstance(obj, np.ndarray):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            out.update(flatten_params(getattr(obj, f.name), f"{prefix}{f.name}."))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.update(flatten_params(item, f"{prefix}{i}."))
    elif isinstance(obj, (int, float)):
        out[prefix] = np.asarray(obj, dtype=np.float64)
    return {k.rstrip("."): v for k, v in out.items()}


def unflatten_into(template, params: dict[str, np.ndarray], prefix: str = ""):
    """Rebuild a structure shaped like ``template`` from flattened ``params``."""
    if isinstance(template, np.ndarray):
        arr = params[prefix.rstrip(".")]
        if arr.shape != template.shape:
            raise DataError(f"{prefix.rstrip('.')}: shape {arr.shape} != {template.shape}")
        return arr
    if dataclasses.is_dataclass(template):
        kwargs = {f.name: unflatten_into(getattr(template, f.name), params, f"{prefix}{f.name}.")
                  for f in dataclasses.fields(template)}
        return type(template)(**kwargs)
    if isinstance(template, list):
        return [unflatten_into(t, params, f"{prefix}{i}.") for i, t in enumerate(template)]
    return template


def save_params(directory, params: dict[str, np.ndarray]) -> None:
    """One matrix file per tensor plus ``manifest.json`` with shapes and digests."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, arr in sorted(params.items()):
        a = np.asarray(arr, dtype=np.float64)
        fname = name + ".bin"
        write_matrix(d / fname, a.reshape(1, -1) if a.ndim < 2 else a.reshape(-1, a.shape[-1]))
        manifest[name] = {"file": fname, "shape": list(a.shape), "sha256": sha256_file(d / fname)}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_params(directory) -> dict[str, np.ndarray]:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read weight manifest in {d}: {exc}") from exc
    out = {}
    for name, entry in manifest.items():
        if sha256_file(d / entry["file"]) != entry["sha256"]:
            raise DataError(f"{name}: digest mismatch")
        out[name] = read_matrix(d / entry["file"]).reshape(entry["shape"])
    return out
