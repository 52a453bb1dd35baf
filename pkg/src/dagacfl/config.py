"""Simulation configuration: YAML document <-> nested dataclasses.

Every field has a default; unknown keys are rejected with their dotted path.
Keys may be written with hyphens or underscores.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .changepoint import SegmentPrior
from .datasets import MNIST_SUPERCLASSES, ClusterPlan
from .fedcore import LOGISTIC, ModelSpec, TrainConfig
from .tipselect import TipSelectConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class ModelSection:
    kind: str = LOGISTIC
    hidden_dim: int = 128
    similarity_layers: tuple[str, ...] | None = None


@dataclass(frozen=True)
class TipSelectSection:
    mode: str = "adaptive"
    nt: int = 1
    alpha: float = 0.5
    prior: SegmentPrior = field(default_factory=SegmentPrior)


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    input_dim: int = 32
    class_count: int | None = None
    noise: float = 0.3
    max_cosine: float = 0.5
    mnist_images: str | None = None
    mnist_labels: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "mnist"):
            raise ValueError(f"unknown data source {self.source!r}")
        if self.source == "mnist" and not (self.mnist_images and self.mnist_labels):
            raise ValueError("mnist source needs mnist_images and mnist_labels paths")


@dataclass(frozen=True)
class Sizes:
    hash_bytes: int = 32
    overhead_bytes: int = 64

    def __post_init__(self):
        if self.hash_bytes < 0 or self.overhead_bytes < 0:
            raise ValueError("sizes must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    rounds: int = 100
    participation_rate: float = 1.0
    servers: int = 3
    sync_period: int = 1
    seed: int = 0
    baseline: str = "none"
    first_join: str = "train"
    louvain_seed: int = 0
    in_flight: int | None = None
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    tip_select: TipSelectSection = field(default_factory=TipSelectSection)
    plan: ClusterPlan = field(default_factory=ClusterPlan)
    data: DataSection = field(default_factory=DataSection)
    sizes: Sizes = field(default_factory=Sizes)

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.participation_rate <= 1:
            raise ValueError("participation_rate must lie in (0, 1]")
        if self.in_flight is not None and self.in_flight < 1:
            raise ValueError("in_flight must be >= 1 (or null for all participants)")
        if self.servers < 1 or self.sync_period < 1:
            raise ValueError("servers and sync_period must be >= 1")
        if self.baseline not in ("none", "fedavg"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.first_join not in ("train", "genesis"):
            raise ValueError(f"first_join must be 'train' or 'genesis', not {self.first_join!r}")

    @property
    def input_dim(self) -> int:
        return 784 if self.data.source == "mnist" else self.data.input_dim

    @property
    def class_count(self) -> int:
        if self.data.class_count is not None:
            return self.data.class_count
        return 10 if self.data.source == "mnist" else max(self.plan.labels) + 1

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.model.kind, self.input_dim, self.class_count, self.model.hidden_dim,
                         self.model.similarity_layers)

    def tip_config(self) -> TipSelectConfig:
        ts = self.tip_select
        return TipSelectConfig(ts.mode, ts.nt, ts.alpha, self.model_spec().similarity_layers, ts.prior)

    def validate(self) -> None:
        """Cross-section feasibility checks; raises ConfigError."""
        try:
            self.model_spec()
        except ValueError as exc:
            raise ConfigError("model", str(exc)) from None
        if self.class_count <= max(self.plan.labels):
            raise ConfigError("data.class_count", f"{self.class_count} classes cannot hold label {max(self.plan.labels)}")
        try:
            self.tip_config()
        except ValueError as exc:
            raise ConfigError("tip_select", str(exc)) from None
        if self.data.source == "mnist":
            for key in ("mnist_images", "mnist_labels"):
                if not Path(getattr(self.data, key)).exists():
                    raise ConfigError(f"data.{key}", "file not found")


def _norm(key: str) -> str:
    return str(key).replace("-", "_")


def _build(cls, raw: Any, path: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(path, f"expected a section, got {type(raw).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = _norm(key)
        where = f"{path}.{name}" if path else name
        if name not in known:
            raise ConfigError(where, "unknown key")
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, where)
        elif isinstance(value, list):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or "<root>", str(exc)) from None


_SECTIONS = {
    (SimConfig, "model"): ModelSection,
    (SimConfig, "train"): TrainConfig,
    (SimConfig, "tip_select"): TipSelectSection,
    (SimConfig, "plan"): ClusterPlan,
    (SimConfig, "data"): DataSection,
    (SimConfig, "sizes"): Sizes,
    (TipSelectSection, "prior"): SegmentPrior,
}


def config_from_dict(raw: dict | None) -> SimConfig:
    cfg = _build(SimConfig, raw, "")
    cfg.validate()
    return cfg


def config_to_dict(cfg) -> dict:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        return v
    return plain(cfg)


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.sub=value`` strings; values are parsed as YAML scalars."""
    raw = dict(raw or {})
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like KEY=VALUE")
        key, value = item.split("=", 1)
        parts = [_norm(p) for p in key.strip().split(".")]
        node = raw
        for p in parts[:-1]:
            child = node.get(p)
            node[p] = dict(child) if isinstance(child, dict) else {}
            node = node[p]
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def _normalise_keys(raw):
    if isinstance(raw, dict):
        return {_norm(k): _normalise_keys(v) for k, v in raw.items()}
    return raw


def load_config(path=None, overrides=()) -> SimConfig:
    """Load a YAML config (or a run manifest.json) and apply ``KEY=VALUE`` overrides."""
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"not valid YAML ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(str(path), "top level must be a mapping")
        if "tool_version" in raw and isinstance(raw.get("config"), dict):
            raw = raw["config"]  # a run manifest: reuse its resolved config echo
    return config_from_dict(apply_overrides(_normalise_keys(raw), overrides))


def mnist_plan(clients_per_superclass=(30, 30, 30), samples_per_client=600, type="I") -> ClusterPlan:
    return ClusterPlan(MNIST_SUPERCLASSES, clients_per_superclass, type, samples_per_client)
