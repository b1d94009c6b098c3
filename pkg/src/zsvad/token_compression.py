"""Training-free visual token compression by reverse attention.

Background tokens are numerous and similar to each other, so they sit in
dense regions of feature space. The compressor

1. scores every token by k-NN local density ``k / sum of squared
   distances to its k nearest other tokens``;
2. keeps the ``num_kept`` densest tokens as background prototypes;
3. assigns every token to its nearest prototype (Euclidean);
4. for each prototype, attends over its assigned tokens with *negated*
   similarity scores, so the tokens least like the background dominate
   the aggregated output row.

The result has exactly ``num_kept = max(1, round(ratio * num_tokens))`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .numerics import as_matrix, pairwise_sq_dist, round_half_away, row_softmax, top_k


@dataclass(frozen=True)
class TokenSet:
    tokens: np.ndarray
    grid_shape: tuple | None = None

    def __post_init__(self):
        z = as_matrix(self.tokens, "tokens")
        if z.shape[0] < 1 or z.shape[1] < 1:
            raise ContractViolation(f"token set must be non-empty, got {z.shape}")
        if self.grid_shape is not None and int(np.prod(self.grid_shape)) != z.shape[0]:
            raise ContractViolation(f"grid {self.grid_shape} does not cover {z.shape[0]} tokens")
        object.__setattr__(self, "tokens", z)

    def __len__(self):
        return self.tokens.shape[0]


@dataclass(frozen=True)
class CompressionConfig:
    k: int = 8
    ratio: float = 0.2
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.k < 1:
            raise ContractViolation("k must be >= 1")
        if not 0.0 < self.ratio <= 1.0:
            raise ContractViolation(f"ratio {self.ratio} outside (0, 1]")
        if not self.epsilon > 0.0:
            raise ContractViolation("epsilon must be > 0")


@dataclass
class CompressionResult:
    compressed: np.ndarray
    background_indices: np.ndarray
    assignment: np.ndarray
    densities: np.ndarray
    # per-token reverse-attention weight within its neighbourhood
    attention: np.ndarray = field(default=None)

    @property
    def num_tokens(self) -> int:
        return self.compressed.shape[0]


def retained_count(num_tokens: int, ratio: float) -> int:
    return max(1, round_half_away(ratio * num_tokens))


def local_density(tokens: TokenSet, k: int, epsilon: float = 1e-12) -> np.ndarray:
    z = tokens.tokens
    n = z.shape[0]
    if not 1 <= k <= n - 1:
        raise ContractViolation(f"k={k} needs 1 <= k <= num_tokens - 1 = {n - 1}")
    d = pairwise_sq_dist(z, z)
    np.fill_diagonal(d, np.inf)
    nearest = np.partition(d, k - 1, axis=1)[:, :k]
    total = nearest.sum(axis=1)
    return k / np.maximum(total, epsilon)


def select_background(densities, ratio: float) -> np.ndarray:
    density = np.asarray(densities, dtype=np.float64)
    if not np.all(np.isfinite(density)):
        raise ContractViolation("densities must be finite")
    return top_k(density, retained_count(density.shape[0], ratio))


def assign_to_background(tokens: TokenSet, background_indices) -> np.ndarray:
    """Position (into ``background_indices``) of each token's nearest prototype."""
    bg = np.asarray(background_indices, dtype=np.intp)
    if bg.size == 0:
        raise ContractViolation("background set is empty")
    d = pairwise_sq_dist(tokens.tokens, tokens.tokens[bg])
    assignment = np.argmin(d, axis=1)
    # a prototype always owns itself, even if it duplicates an earlier prototype
    assignment[bg] = np.arange(bg.size)
    return assignment


def reverse_attend(tokens: TokenSet, background_indices, assignment,
                   densities=None) -> CompressionResult:
    z = tokens.tokens
    bg = np.asarray(background_indices, dtype=np.intp)
    assignment = np.asarray(assignment, dtype=np.intp)
    if assignment.shape != (z.shape[0],) or assignment.min() < 0 or assignment.max() >= bg.size:
        raise ContractViolation("assignment is not a partition over the background set")
    scale = -1.0 / np.sqrt(z.shape[1])
    out = np.empty((bg.size, z.shape[1]))
    weights = np.zeros(z.shape[0])
    for i, b in enumerate(bg):
        members = np.flatnonzero(assignment == i)
        if members.size == 0:
            out[i] = z[b]
            continue
        zn = z[members]
        w = row_softmax(z[b][None, :] @ zn.T, scale)[0]
        out[i] = w @ zn
        weights[members] = w
    return CompressionResult(out, bg, assignment, densities, weights)


def compress(tokens: TokenSet, config: CompressionConfig = CompressionConfig()) -> CompressionResult:
    density = local_density(tokens, config.k, config.epsilon)
    bg = select_background(density, config.ratio)
    assignment = assign_to_background(tokens, bg)
    return reverse_attend(tokens, bg, assignment, density)
