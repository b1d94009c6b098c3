"""Prompt rendering and pluggable providers for the clip-level semantic vector.

A provider maps ``(compressed visual tokens, prompt)`` to one vector of
dimension ``dim``. Real multimodal models are reached through
:class:`SubprocessProvider`; the in-process providers are deterministic
stand-ins used for tests and desk-scale runs.
"""

from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import ContractViolation, FixtureNotFound, ProviderError
from .numerics import Rng, string_seed
from .token_compression import CompressionResult

SEG_TOKEN = "<SEG>"

TEMPLATES = {
    "locate": "USER: Locate the abnormal event in this clip. Possible anomaly types: {categories}. "
              "ASSISTANT: It is " + SEG_TOKEN + ".",
    "inspect": "USER: Is anything unusual happening here? Candidate anomalies include {categories}. "
               "ASSISTANT: Sure, " + SEG_TOKEN + ".",
}
TEMPLATE_IDS = tuple(TEMPLATES)


@dataclass(frozen=True)
class PromptSpec:
    template_id: str
    categories: tuple
    rendered: str


@dataclass(frozen=True)
class SemanticFeature:
    vector: np.ndarray
    provider_id: str
    prompt: PromptSpec


def render_prompt(categories, template_id: str = "locate", rng: Rng | None = None) -> PromptSpec:
    """Fill ``categories`` (comma separated, order kept) into a template.

    ``template_id="random"`` picks a template uniformly with ``rng``.
    """
    cats = tuple(categories)
    if not cats:
        raise ContractViolation("render_prompt needs at least one category")
    if template_id == "random":
        if rng is None:
            raise ContractViolation("template_id='random' requires an rng")
        template_id = TEMPLATE_IDS[rng.below(len(TEMPLATE_IDS))]
    if template_id not in TEMPLATES:
        raise ContractViolation(f"unknown template {template_id!r}")
    text = TEMPLATES[template_id].format(categories=", ".join(cats))
    return PromptSpec(template_id, cats, text)


class SemanticProvider(Protocol):
    provider_id: str
    dim: int

    def extract(self, visual: CompressionResult, prompt: PromptSpec,
                sample_id: str | None = None) -> np.ndarray: ...


def hash_embedding(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic Gaussian vector keyed by ``text`` (sha256 -> xoshiro)."""
    return Rng(string_seed(seed, text)).normals((dim,))


class SyntheticProvider:
    """Linear mix of the mean compressed token and a bag of category hashes.

    ``semantic = A @ mean(Z') + sum_c h(c) / sqrt(dim)`` where ``A`` is a
    seeded Gaussian ``dim x token_dim`` matrix with std ``1/sqrt(token_dim)`` and
    ``h`` is :func:`hash_embedding`. The category bag is a sum, so category
    order does not matter; the map is affine in the visual input with
    Lipschitz constant ``||A||_2`` (see :meth:`lipschitz_constant`).
    """

    provider_id = "synthetic"

    def __init__(self, dim: int = 256, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._mix: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def mixing_matrix(self, token_dim: int) -> np.ndarray:
        with self._lock:
            if token_dim not in self._mix:
                rng = Rng(string_seed(self.seed, f"visual-mix/{token_dim}"))
                self._mix[token_dim] = rng.normals((self.dim, token_dim), std=1.0 / np.sqrt(token_dim))
            return self._mix[token_dim]

    def lipschitz_constant(self, token_dim: int) -> float:
        return float(np.linalg.norm(self.mixing_matrix(token_dim), 2))

    def extract(self, visual, prompt, sample_id=None):
        z = visual.compressed
        visual_part = self.mixing_matrix(z.shape[1]) @ z.mean(axis=0)
        bag = np.zeros(self.dim)
        for c in prompt.categories:
            bag += hash_embedding(c, self.dim, self.seed)
        return visual_part + bag / np.sqrt(self.dim)


class FixtureProvider:
    """Returns vectors stored per sample id in a JSON-lines file.

    Each line is ``{"sample_id": str, "vector": [float, ...]}``.
    """

    provider_id = "fixture"

    def __init__(self, vectors: dict[str, np.ndarray], dim: int | None = None):
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        dims = {v.shape[0] for v in self.vectors.values()}
        if dim is None:
            dim = dims.pop() if len(dims) == 1 else 0
        elif dims - {dim}:
            raise ProviderError(f"fixture vectors have dims {sorted(dims)}, expected {dim}")
        self.dim = dim

    @classmethod
    def load(cls, path, dim: int | None = None) -> "FixtureProvider":
        vectors = {}
        try:
            for line in Path(path).read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    vectors[str(rec["sample_id"])] = rec["vector"]
        except (OSError, ValueError, KeyError) as exc:
            raise ProviderError(f"cannot load fixture file {path}: {exc}") from exc
        return cls(vectors, dim)

    @staticmethod
    def save(path, vectors: dict) -> None:
        with open(path, "w") as fh:
            for sid, vec in vectors.items():
                fh.write(json.dumps({"sample_id": sid, "vector": [float(x) for x in vec]}) + "\n")

    def extract(self, visual, prompt, sample_id=None):
        if sample_id not in self.vectors:
            raise FixtureNotFound(f"fixture not found for sample {sample_id!r}")
        return self.vectors[sample_id].copy()


class SubprocessProvider:
    """Line protocol to an external worker process.

    Request (one JSON object per line)::

        {"sample_id": str, "prompt": str, "categories": [str],
         "tokens": [[float]], "dim": int}

    Response: ``{"vector": [float]}`` or ``{"error": str}``. A worker that
    does not answer within ``timeout`` seconds is killed and a
    :class:`ProviderError` is raised. Requests are serialised per worker.
    """

    provider_id = "subprocess"

    def __init__(self, command: list[str], dim: int, timeout: float = 30.0):
        self.command = list(command)
        self.dim = dim
        self.timeout = timeout
        self._proc = None
        self._lock = threading.Lock()

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, bufsize=1)
            except OSError as exc:
                raise ProviderError(f"cannot start provider {self.command}: {exc}") from exc
        return self._proc

    def _readline(self, proc) -> str:
        box = []
        reader = threading.Thread(target=lambda: box.append(proc.stdout.readline()), daemon=True)
        reader.start()
        reader.join(self.timeout)
        if reader.is_alive():
            self.close()
            raise ProviderError(f"provider timed out after {self.timeout}s")
        return box[0]

    def extract(self, visual, prompt, sample_id=None):
        request = {
            "sample_id": sample_id,
            "prompt": prompt.rendered,
            "categories": list(prompt.categories),
            "tokens": visual.compressed.tolist(),
            "dim": self.dim,
        }
        with self._lock:
            proc = self._ensure()
            try:
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise ProviderError(f"provider pipe closed: {exc}") from exc
            line = self._readline(proc)
        if not line:
            raise ProviderError("provider exited without a response")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProviderError(f"provider sent invalid JSON: {exc}") from exc
        if "error" in reply:
            raise ProviderError(f"provider error: {reply['error']}")
        vec = np.asarray(reply.get("vector", ()), dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ProviderError(f"provider returned shape {vec.shape}, expected ({self.dim},)")
        return vec

    def close(self):
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None


def extract_semantic(visual: CompressionResult, prompt: PromptSpec, provider,
                     sample_id: str | None = None) -> SemanticFeature:
    vec = np.asarray(provider.extract(visual, prompt, sample_id), dtype=np.float64)
    if vec.shape != (provider.dim,):
        raise ProviderError(f"{provider.provider_id}: got shape {vec.shape}, expected ({provider.dim},)")
    if not np.all(np.isfinite(vec)):
        raise ProviderError(f"{provider.provider_id}: non-finite semantic feature")
    return SemanticFeature(vec, provider.provider_id, prompt)
