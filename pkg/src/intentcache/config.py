"""Run configuration: a flat ``section.key = value`` file over documented defaults."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, get_type_hints

from .errors import ConfigurationError


@dataclass
class PathsConfig:
    documents: Optional[str] = None  # None selects the bundled sample
    queries: Optional[str] = None
    relevance: Optional[str] = None
    lexical_graph: Optional[str] = None
    keywords_informational: Optional[str] = None
    keywords_navigational: Optional[str] = None
    keywords_transactional: Optional[str] = None
    stopwords: Optional[str] = None
    ner_fixture: Optional[str] = None


@dataclass
class PipelineConfig:
    expansion_threshold: float = 0.3
    theta: float = 0.9
    theta_cache: float = 0.9
    max_rounds: int = 3
    t_max: int = 10
    relax_step: float = 0.05
    top_k: int = 10


@dataclass
class ClusteringConfig:
    h: Optional[float] = None  # None: median pairwise distance
    alpha: float = 5.0
    beta: float = 0.5
    cut: Optional[float] = None  # None: the selected epsilon
    naive_min_pts: int = 2
    naive_eps: Optional[float] = None  # None: largest pairwise distance


@dataclass
class ModelConfig:
    d: int = 32
    d_k: int = 32
    m: int = 32
    heads: int = 4
    head_dim: int = 8
    standard_gru: bool = False


@dataclass
class TrainingConfig:
    ner_epochs: int = 500
    ner_lr: float = 20.0
    epochs: int = 300
    lr: float = 0.5
    negatives: Optional[int] = None  # None: every irrelevant candidate
    split_ratio: float = 0.8


@dataclass
class CacheConfig:
    capacity: int = 1024


@dataclass
class RunSection:
    seed: int = 0
    workers: int = 1


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "RunConfig":
        p, c, t = self.pipeline, self.clustering, self.training
        checks = [
            (0.0 < p.expansion_threshold <= 1.0, "pipeline.expansion_threshold must lie in (0, 1]"),
            (0.0 < p.theta <= 1.0, "pipeline.theta must lie in (0, 1]"),
            (0.0 < p.theta_cache <= 1.0, "pipeline.theta_cache must lie in (0, 1]"),
            (p.max_rounds >= 1, "pipeline.max_rounds must be at least 1"),
            (p.t_max >= 1, "pipeline.t_max must be at least 1"),
            (p.relax_step >= 0.0, "pipeline.relax_step must be non-negative"),
            (p.top_k >= 1, "pipeline.top_k must be at least 1"),
            (c.h is None or c.h > 0, "clustering.h must be positive"),
            (c.alpha > 0, "clustering.alpha must be positive"),
            (0.0 < c.beta < 1.0, "clustering.beta must lie in (0, 1)"),
            (c.cut is None or c.cut > 0, "clustering.cut must be positive"),
            (c.naive_min_pts >= 2, "clustering.naive_min_pts must be at least 2"),
            (c.naive_eps is None or c.naive_eps > 0, "clustering.naive_eps must be positive"),
            (min(self.model.d, self.model.d_k, self.model.m, self.model.heads, self.model.head_dim) >= 1,
             "model dimensions must be positive"),
            (t.ner_epochs >= 0 and t.epochs >= 0, "training epochs must be non-negative"),
            (t.ner_lr > 0 and t.lr > 0, "learning rates must be positive"),
            (t.negatives is None or t.negatives >= 1, "training.negatives must be at least 1"),
            (0.0 < t.split_ratio < 1.0, "training.split_ratio must lie in (0, 1)"),
            (self.cache.capacity >= 1, "cache.capacity must be at least 1"),
            (self.run.workers >= 1, "run.workers must be at least 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)
        return self


def _coerce(raw: str, typ, key: str):
    optional = typ is not None and getattr(typ, "__origin__", None) is not None and type(None) in typ.__args__
    if optional:
        if raw.lower() in ("none", ""):
            return None
        typ = next(a for a in typ.__args__ if a is not type(None))
    try:
        if typ is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"{key}: cannot read {raw!r} as {typ.__name__}") from None


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigurationError(f"line {line_no}: expected 'section.key = value'")
        section_name, dot, name = key.partition(".")
        section = getattr(cfg, section_name, None) if dot else None
        if section is None or not dataclasses.is_dataclass(section):
            raise ConfigurationError(f"line {line_no}: unknown key {key!r}")
        hints = get_type_hints(type(section))
        if name not in hints:
            raise ConfigurationError(f"line {line_no}: unknown key {key!r}")
        setattr(section, name, _coerce(value, hints[name], key))
    return cfg.validate()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        section = getattr(cfg, f.name)
        for sf in dataclasses.fields(section):
            v = getattr(section, sf.name)
            lines.append(f"{f.name}.{sf.name} = {'none' if v is None else str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
