"""Multi-scale semantic projector.

Per frame, category features attend over that frame's patch features to
give one frame-level feature per category. The clip-level semantic
vector is mapped into the same space and appended as one extra context
row. Learnable queries and the context then update each other through a
stack of two-way blocks. The queries are mean-pooled and mapped to the
decoder width to give one prompt vector per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import CategoryFeatures, VisionFeatures
from .errors import ContractViolation
from .nn import TwoWayBlock, flatten_params, gaussian, load_params, save_params, unflatten_into
from .numerics import Rng, cross_attention, string_seed
from .semantic_provider import SemanticFeature


@dataclass
class ProjectorWeights:
    category_proj: np.ndarray  # text_dim x attn_dim
    patch_proj: np.ndarray     # vision_dim x attn_dim
    attn_out: np.ndarray       # attn_dim x frame_dim
    semantic_proj: np.ndarray  # semantic_dim x frame_dim
    queries: np.ndarray        # num_queries x prompt_dim
    blocks: list = field(default_factory=list)
    out_proj: np.ndarray = None  # prompt_dim x prompt_dim
    out_bias: np.ndarray = None  # prompt_dim

    @classmethod
    def init(cls, seed: int = 0, text_dim: int = 64, vision_dim: int = 64, semantic_dim: int = 256,
             attn_dim: int = 64, frame_dim: int = 64, prompt_dim: int = 64, num_queries: int = 48, depth: int = 2,
             mlp_dim: int = 128) -> "ProjectorWeights":
        rng = Rng(string_seed(seed, "projector"))
        return cls(
            category_proj=gaussian(rng, text_dim, attn_dim),
            patch_proj=gaussian(rng, vision_dim, attn_dim),
            attn_out=gaussian(rng, attn_dim, frame_dim),
            semantic_proj=gaussian(rng, semantic_dim, frame_dim),
            queries=rng.normals((num_queries, prompt_dim)),
            blocks=[TwoWayBlock.init(rng, prompt_dim, frame_dim, prompt_dim, mlp_dim) for _ in range(depth)],
            out_proj=gaussian(rng, prompt_dim, prompt_dim),
            out_bias=np.zeros(prompt_dim),
        )

    @property
    def prompt_dim(self) -> int:
        return self.queries.shape[1]

    def save(self, directory) -> None:
        save_params(directory, flatten_params(self))

    @classmethod
    def load(cls, directory, template: "ProjectorWeights") -> "ProjectorWeights":
        return unflatten_into(template, load_params(directory))


@dataclass
class ProjectedPrompt:
    prompts: np.ndarray   # T x prompt_dim
    frame_features: np.ndarray  # T x K x frame_dim


def frame_cross_attention(category_feats: CategoryFeatures, vision: VisionFeatures,
                          w: ProjectorWeights) -> np.ndarray:
    c = np.asarray(category_feats.features)
    v = vision.features
    if c.shape[1] != w.category_proj.shape[0] or v.shape[2] != w.patch_proj.shape[0]:
        raise ContractViolation(
            f"projector expects text_dim={w.category_proj.shape[0]}, vision_dim={w.patch_proj.shape[0]}; "
            f"got {c.shape[1]}, {v.shape[2]}")
    q = c @ w.category_proj
    scale = 1.0 / np.sqrt(w.category_proj.shape[1])
    out = []
    for t in range(v.shape[0]):
        kv = v[t] @ w.patch_proj
        out.append(cross_attention(q, kv, kv, scale) @ w.attn_out)
    return np.stack(out)


def project(semantic: SemanticFeature | np.ndarray, frame_features: np.ndarray,
            w: ProjectorWeights) -> ProjectedPrompt:
    sem = np.asarray(getattr(semantic, "vector", semantic), dtype=np.float64)
    frame_features = np.asarray(frame_features, dtype=np.float64)
    if sem.shape != (w.semantic_proj.shape[0],):
        raise ContractViolation(f"semantic feature dim {sem.shape} != semantic_dim={w.semantic_proj.shape[0]}")
    if frame_features.ndim != 3 or frame_features.shape[2] != w.semantic_proj.shape[1]:
        raise ContractViolation(
            f"frame_features must be T x K x frame_dim={w.semantic_proj.shape[1]}, got {frame_features.shape}")
    sem_row = (sem @ w.semantic_proj)[None, :]
    rows = []
    for t in range(frame_features.shape[0]):
        ctx = np.concatenate([sem_row, frame_features[t]], axis=0)
        q = w.queries
        for block in w.blocks:
            q, ctx = block(q, ctx)
        rows.append(q.mean(axis=0) @ w.out_proj + w.out_bias)
    return ProjectedPrompt(np.stack(rows), frame_features)
