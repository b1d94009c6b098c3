"""Pipeline configuration: an INI file with one section per stage.

Every key has a default, so an empty file is a valid configuration.
``python -m zsvad config`` prints the full default file.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .decoder import LossConfig
from .errors import ConfigError, ContractViolation
from .exposure_sampler import SamplerConfig
from .semantic_provider import TEMPLATE_IDS
from .token_compression import CompressionConfig

PROVIDERS = ("synthetic", "fixture", "subprocess", "oracle")


@dataclass(frozen=True)
class EncoderConfig:
    patch_size: int = 16
    vision_dim: int = 64
    text_dim: int = 64


@dataclass(frozen=True)
class SemanticConfig:
    provider: str = "synthetic"
    semantic_dim: int = 256
    template: str = "locate"
    fixture_path: str = ""
    command: str = ""
    timeout: float = 30.0


@dataclass(frozen=True)
class ProjectorConfig:
    attn_dim: int = 64
    frame_dim: int = 64
    prompt_dim: int = 64
    num_queries: int = 48
    depth: int = 2
    mlp_dim: int = 128


@dataclass(frozen=True)
class DecoderConfig:
    pixel_dim: int = 32
    depth: int = 2
    mlp_dim: int = 128
    upsample: int = 4


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    weights_dir: str = ""


@dataclass(frozen=True)
class PipelineConfig:
    run: RunConfig = field(default_factory=RunConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    semantic: SemanticConfig = field(default_factory=SemanticConfig)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Digest of every setting that can change an output; the worker count cannot."""
        d = self.to_dict()
        d["run"].pop("workers")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, section: str, **changes) -> "PipelineConfig":
        try:
            updated = dataclasses.replace(getattr(self, section), **changes)
        except ContractViolation as exc:
            raise ConfigError(f"[{section}] {exc}") from exc
        new = dataclasses.replace(self, **{section: updated})
        validate(new)
        return new


def validate(cfg: PipelineConfig) -> None:
    """Range and cross-module checks; raises :class:`ConfigError`."""
    problems = []
    e, s, p, d = cfg.encoder, cfg.semantic, cfg.projector, cfg.decoder
    sizes = [("encoder.patch_size", e.patch_size), ("encoder.vision_dim", e.vision_dim),
             ("encoder.text_dim", e.text_dim), ("semantic.semantic_dim", s.semantic_dim),
             ("projector.attn_dim", p.attn_dim), ("projector.frame_dim", p.frame_dim),
             ("projector.prompt_dim", p.prompt_dim), ("projector.num_queries", p.num_queries),
             ("projector.mlp_dim", p.mlp_dim), ("decoder.pixel_dim", d.pixel_dim),
             ("decoder.mlp_dim", d.mlp_dim), ("decoder.upsample", d.upsample),
             ("run.workers", cfg.run.workers)]
    for name, value in sizes:
        if value < 1:
            problems.append(f"{name} must be >= 1 (got {value})")
    if p.depth < 0 or d.depth < 0:
        problems.append("depths must be >= 0")
    if s.provider not in PROVIDERS:
        problems.append(f"semantic.provider must be one of {PROVIDERS}")
    if s.template not in TEMPLATE_IDS + ("random",):
        problems.append(f"semantic.template must be one of {TEMPLATE_IDS + ('random',)}")
    if s.provider == "fixture" and not s.fixture_path:
        problems.append("semantic.fixture_path is required for the fixture provider")
    if s.provider == "subprocess" and not s.command:
        problems.append("semantic.command is required for the subprocess provider")
    if s.provider == "oracle" and d.depth < 1:
        problems.append("the oracle provider needs decoder.depth >= 1")
    if s.provider == "oracle" and p.prompt_dim < 5:
        problems.append("the oracle provider needs projector.prompt_dim >= 5")
    if s.timeout <= 0:
        problems.append("semantic.timeout must be > 0")
    if problems:
        raise ConfigError("; ".join(problems))


def _coerce(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    defaults = PipelineConfig()
    sections = {}
    for f in dataclasses.fields(PipelineConfig):
        sections[f.name] = getattr(defaults, f.name)
    unknown = set(parser.sections()) - set(sections)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    built = {}
    for name, default in sections.items():
        values = {}
        known = {f.name: getattr(default, f.name) for f in dataclasses.fields(default)}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in known:
                    raise ConfigError(f"unknown key [{name}] {key}")
                try:
                    values[key] = _coerce(raw, known[key])
                except ValueError as exc:
                    raise ConfigError(f"[{name}] {key}: {exc}") from exc
        try:
            built[name] = dataclasses.replace(default, **values)
        except ContractViolation as exc:
            raise ConfigError(f"[{name}] {exc}") from exc
    cfg = PipelineConfig(**built)
    validate(cfg)
    return cfg


def load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        lines.append(f"[{f.name}]")
        section = getattr(cfg, f.name)
        for sf in dataclasses.fields(section):
            lines.append(f"{sf.name} = {getattr(section, sf.name)}")
        lines.append("")
    return "\n".join(lines)
