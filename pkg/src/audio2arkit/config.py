"""Pipeline configuration: one YAML document, ``${VAR}`` / ``${VAR:-default}`` expanded from the environment."""

from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Literal

import yaml

from .alignment import AlignmentConfig
from .metrics import MetricsConfig
from .smoothing import SmoothingConfig


class ConfigError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    mode: Literal["rule", "remote"] = "rule"
    endpoint: str | None = None
    token: str | None = None
    timeout: float = 60.0
    retries: int = 3
    concurrency: int = 4
    max_tokens: int = 8192
    frame_tolerance: int = 2
    decimals: int = 2
    priors: Path | None = None


@dataclass
class PathsConfig:
    corpus: Path = Path("corpus")
    output: Path = Path("out")


@dataclass
class PipelineConfig:
    schema: Path | None = None
    fps: float = 30.0
    language: Literal["en", "zh"] | None = None
    naive_split: bool = True
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        self.alignment.fps = self.fps

    def snapshot(self) -> dict:
        """JSON-friendly view without filesystem paths (those vary between runs)."""
        doc = asdict(self)
        doc.pop("paths")
        doc["schema"] = None if self.schema is None else Path(self.schema).name
        gen = doc["generator"]
        gen.pop("token")
        gen["priors"] = None if self.generator.priors is None else Path(self.generator.priors).name
        return doc


_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):
        def sub(m):
            name, default = m.group(1), m.group(2)
            if name in os.environ:
                return os.environ[name]
            if default is not None:
                return default
            raise ConfigError(f"environment variable {name} is not set")
        return _VAR.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def _build(cls, raw: dict | None, section: str):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def config_from_dict(doc: dict, base_dir: Path | None = None, check_paths: bool = True) -> PipelineConfig:
    doc = _interpolate(dict(doc or {}))
    base_dir = base_dir or Path.cwd()
    sections = {"alignment", "smoothing", "generator", "metrics", "paths"}
    top = {k: v for k, v in doc.items() if k not in sections}
    unknown = set(top) - {"schema", "fps", "language", "naive_split"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    def resolve(p):
        return None if p is None else (base_dir / Path(p)).resolve()

    paths = _build(PathsConfig, doc.get("paths"), "paths")
    paths = PathsConfig(resolve(paths.corpus), resolve(paths.output))
    gen = _build(GeneratorConfig, doc.get("generator"), "generator")
    gen.priors = resolve(gen.priors)
    alignment_raw = dict(doc.get("alignment") or {})
    if "fps" in alignment_raw:
        raise ConfigError("set fps at the top level, not under 'alignment'")
    try:
        cfg = PipelineConfig(
            schema=resolve(top.get("schema")),
            fps=float(top.get("fps", 30.0)),
            language=top.get("language"),
            naive_split=bool(top.get("naive_split", True)),
            alignment=_build(AlignmentConfig, alignment_raw, "alignment"),
            smoothing=_build(SmoothingConfig, doc.get("smoothing"), "smoothing"),
            generator=gen,
            metrics=_build(MetricsConfig, doc.get("metrics"), "metrics"),
            paths=paths,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg, check_paths)
    return cfg


def validate(cfg: PipelineConfig, check_paths: bool = True):
    if not cfg.fps > 0:
        raise ConfigError("fps must be positive")
    if cfg.language not in (None, "en", "zh"):
        raise ConfigError(f"unsupported language {cfg.language!r}")
    if cfg.generator.mode not in ("rule", "remote"):
        raise ConfigError(f"generator.mode must be 'rule' or 'remote', got {cfg.generator.mode!r}")
    if cfg.generator.mode == "remote" and not cfg.generator.endpoint:
        raise ConfigError("generator.endpoint is required in remote mode")
    if cfg.metrics.ot_method not in ("exact", "sinkhorn"):
        raise ConfigError(f"metrics.ot_method must be 'exact' or 'sinkhorn'")
    if check_paths:
        for label, p in (("schema", cfg.schema), ("generator.priors", cfg.generator.priors),
                         ("paths.corpus", cfg.paths.corpus)):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{label} does not exist: {p}")


def load_config(path: str | Path | None, check_paths: bool = True) -> PipelineConfig:
    if path is None:
        return config_from_dict({}, Path.cwd(), check_paths)
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text("utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return config_from_dict(doc, path.parent, check_paths)
