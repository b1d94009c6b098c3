"""Dense numeric kernels and the seeded PRNG shared by every stage.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` is the
single place where shape and finiteness are checked.
"""

from __future__ import annotations

import hashlib
import math
from typing import Sequence

import numpy as np

from .errors import ContractViolation

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation(f"{name} contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(m, scale: float = 1.0) -> np.ndarray:
    """Softmax of ``scale * m`` along each row, with max-subtraction."""
    s = as_matrix(m) * scale
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def pairwise_sq_dist(a, b, chunk: int = 256) -> np.ndarray:
    """Squared Euclidean distances between rows of ``a`` and rows of ``b``.

    Computed from explicit differences (not the ``|a|^2 + |b|^2 - 2ab``
    expansion) so that identical rows give exactly zero.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ContractViolation(f"pairwise_sq_dist: {a.shape} vs {b.shape}")
    out = np.empty((a.shape[0], b.shape[0]))
    for lo in range(0, a.shape[0], chunk):
        diff = a[lo:lo + chunk, None, :] - b[None, :, :]
        out[lo:lo + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return np.maximum(out, 0.0)


def top_k(values: Sequence[float], k: int) -> np.ndarray:
    """Indices of the ``k`` largest values, ordered by (value desc, index asc)."""
    v = np.asarray(values, dtype=np.float64)
    if k > v.shape[0] or k < 0:
        raise ContractViolation(f"top_k: k={k} for {v.shape[0]} values")
    return np.argsort(-v, kind="stable")[:k]


def cross_attention(q, kmat, vmat, scale: float) -> np.ndarray:
    q = as_matrix(q, "q")
    kmat = as_matrix(kmat, "k")
    vmat = as_matrix(vmat, "v")
    if q.shape[1] != kmat.shape[1] or kmat.shape[0] != vmat.shape[0]:
        raise ContractViolation(
            f"cross_attention: q{q.shape} k{kmat.shape} v{vmat.shape}")
    return row_softmax(q @ kmat.T, scale) @ vmat


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def splitmix64(x: int) -> int:
    """First output of a splitmix64 generator whose state is ``x``."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def string_seed(seed: int, text: str) -> int:
    """64-bit seed derived from ``(seed, text)`` via sha256."""
    digest = hashlib.sha256(f"{seed}:{text}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def _xoshiro_fill_py(state: list[int], n: int) -> list[int]:
    s0, s1, s2, s3 = state
    m = _MASK64
    out = [0] * n
    for i in range(n):
        x = (s1 * 5) & m
        out[i] = ((((x << 7) & m) | (x >> 57)) * 9) & m
        t = (s1 << 17) & m
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) & m) | (s3 >> 19)
    state[:] = [s0, s1, s2, s3]
    return out


if numba is not None:
    @numba.njit(cache=True)
    def _xoshiro_fill_jit(state, out):
        s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
        for i in range(out.shape[0]):
            x = s1 * numba.uint64(5)
            out[i] = ((x << numba.uint64(7)) | (x >> numba.uint64(57))) * numba.uint64(9)
            t = s1 << numba.uint64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << numba.uint64(45)) | (s3 >> numba.uint64(19))
        state[0], state[1], state[2], state[3] = s0, s1, s2, s3


class Rng:
    """xoshiro256** seeded from a 64-bit integer through splitmix64.

    The state words are the first four outputs of a splitmix64 sequence
    started at ``seed``. Floats use the top 53 bits; bounded integers use
    rejection so they are exactly uniform; normals use Box-Muller (cosine
    branch only, two uniforms per draw).
    """

    def __init__(self, seed: int):
        x = seed & _MASK64
        state = []
        for _ in range(4):
            state.append(splitmix64(x))
            x = (x + _GOLDEN) & _MASK64
        self._s = state

    def next_u64(self) -> int:
        return _xoshiro_fill_py(self._s, 1)[0]

    def u64s(self, n: int) -> list[int]:
        return self.u64_array(n).tolist() if n > 64 else _xoshiro_fill_py(self._s, n)

    def u64_array(self, n: int) -> np.ndarray:
        if numba is None or n <= 64:
            return np.array(_xoshiro_fill_py(self._s, n), dtype=np.uint64)
        state = np.array(self._s, dtype=np.uint64)
        out = np.empty(n, dtype=np.uint64)
        _xoshiro_fill_jit(state, out)
        self._s = [int(v) for v in state]
        return out

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniforms(self, n: int) -> np.ndarray:
        bits = self.u64_array(n) >> np.uint64(11)
        return bits.astype(np.float64) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ContractViolation("below: n must be positive")
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def shuffle(self, items: list) -> list:
        """Fisher-Yates in place; returns ``items`` for chaining."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, pool: Sequence, k: int) -> list:
        """``k`` distinct elements of ``pool`` without replacement."""
        items = list(pool)
        if k > len(items):
            raise ContractViolation(f"sample: k={k} from {len(items)}")
        for i in range(k):
            j = i + self.below(len(items) - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]

    def normals(self, shape, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape != () else 1
        u = self.uniforms(2 * n)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (z * std).reshape(shape)
