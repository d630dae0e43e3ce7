"""Pipeline configuration: one YAML file, dotted-key overrides on top."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field

import yaml

from .corruption import CorruptionConfig
from .errors import ConfigError
from .gnn import ModelConfig, TrainConfig
from .sampler import SamplerConfig
from .selection import SelectionConfig


@dataclass(frozen=True)
class EmbeddingConfig:
    provider: str = "mock"
    dim: int = 64
    seed: int = 0
    base_url: str = ""
    model: str = ""
    token_env: str = "EMBEDDING_API_TOKEN"

    def __post_init__(self):
        if self.provider not in ("mock", "http"):
            raise ValueError("provider must be 'mock' or 'http'")
        if self.provider == "http" and not self.base_url:
            raise ValueError("http provider needs base_url")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    base_url: str = ""
    model: str = ""
    token_env: str = "COMPLETION_API_TOKEN"
    timeout: float = 120.0
    attempts: int = 3
    backoff: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError("kind must be 'mock' or 'http'")
        if self.kind == "http" and not self.base_url:
            raise ValueError("http backend needs base_url")
        if self.attempts < 1:
            raise ValueError("attempts must be >= 1")


@dataclass(frozen=True)
class CompletionConfig:
    max_evidence: int = 12
    parallelism: int = 4

    def __post_init__(self):
        if self.max_evidence < 1 or self.parallelism < 1:
            raise ValueError("max_evidence and parallelism must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    completion: CompletionConfig = field(default_factory=CompletionConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed!r}")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key {'.'.join(filter(None, [where, unknown[0]]))!r}")
    kwargs = {}
    for key, value in data.items():
        loc = ".".join(filter(None, [where, key]))
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, loc)
        elif typing.get_origin(hint) is tuple and isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def config_from_dict(data: dict | None) -> PipelineConfig:
    return _build(PipelineConfig, data or {}, "")


def _set_dotted(data: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    cur = data
    for part in parts[:-1]:
        cur = cur.setdefault(part, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"cannot override {dotted!r}: {part!r} is not a section")
    cur[parts[-1]] = value


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read YAML at ``path`` (optional) and apply ``{"section.key": value}`` overrides."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, dotted, value)
    return config_from_dict(data)


def parse_override(text: str) -> tuple[str, object]:
    """``section.key=value`` with the value read as YAML (so numbers stay numbers)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def dump_config(cfg: PipelineConfig) -> str:
    def plain(obj):
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        return obj

    return yaml.safe_dump(plain(cfg.as_dict()), sort_keys=False)
