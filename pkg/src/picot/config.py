"""Run configuration: defaults, TOML files and flag overrides."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ABLATIONS = ("passages", "notes", "prolog_answer")
MODES = ("rag", "incontext")
BACKENDS = ("script", "http")


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    mode: str = "rag"
    top_k: int = 5
    chunk_size: int = 100
    k1: float = 1.2
    b: float = 0.75
    ablation: dict = field(default_factory=lambda: {name: False for name in ABLATIONS})
    max_instantiations: int = 50
    max_goals: int = 25
    max_passages: int = 0  # 0 keeps every collected passage
    fallback_retrieval: bool = True
    retrieval_cache: bool = True
    quote_strings: bool = False
    step_workers: int = 1
    backend: str = "script"
    script: Optional[str] = None
    strict_script: bool = False
    base_url: str = "http://localhost:8000/v1"
    model: str = ""
    timeout: float = 120.0
    attempts: int = 3
    backoff: float = 1.0
    max_tokens: int = 4096
    temperature: float = 0.0
    fewshot_dir: Optional[str] = None
    index: Optional[str] = None
    corpus: Optional[str] = None

    def validate(self) -> "Config":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        unknown = set(self.ablation) - set(ABLATIONS)
        if unknown:
            raise ConfigError(f"unknown ablation keys: {sorted(unknown)}")
        for key in ("top_k", "chunk_size", "max_instantiations", "max_goals", "step_workers", "attempts", "max_tokens"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.k1 < 0 or not 0.0 <= self.b <= 1.0:
            raise ConfigError("k1 must be >= 0 and b in [0, 1]")
        if self.max_passages < 0 or self.temperature < 0:
            raise ConfigError("max_passages and temperature must be >= 0")
        return self

    @property
    def ablated(self) -> frozenset:
        return frozenset(name for name, on in self.ablation.items() if on)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if key == "ablation" or value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
        lines.append("[ablation]")
        for name in ABLATIONS:
            lines.append(f"{name} = {_toml_value(self.ablation.get(name, False))}")
        return "\n".join(lines) + "\n"


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    text = str(value).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{text}"'


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def _coerce(key: str, value, current):
    default = getattr(Config(), key)
    if key == "ablation":
        if not isinstance(value, dict):
            raise ConfigError("ablation must be a table")
        merged = dict(current)
        for name, on in value.items():
            if name not in ABLATIONS:
                raise ConfigError(f"unknown ablation key {name!r}")
            if not isinstance(on, bool):
                raise ConfigError(f"ablation.{name} must be a boolean")
            merged[name] = on
        return merged
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def merge(base: Config, values: dict, source: str = "") -> Config:
    """Return ``base`` updated with ``values``; unknown keys are rejected."""
    cfg = dataclasses.replace(base, ablation=dict(base.ablation))
    for key, value in values.items():
        if key not in _FIELDS:
            where = f" in {source}" if source else ""
            raise ConfigError(f"unknown config key {key!r}{where}")
        setattr(cfg, key, _coerce(key, value, getattr(cfg, key)))
    return cfg.validate()


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None) -> Config:
    """Defaults, then the TOML file, then ``overrides`` (flags win)."""
    cfg = Config()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base_dir = Path(path).resolve().parent
        for key in ("script", "fewshot_dir", "index", "corpus"):
            if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
                data[key] = str(base_dir / data[key])
        cfg = merge(cfg, data, str(path))
    if overrides:
        cfg = merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()
