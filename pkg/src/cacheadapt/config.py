"""Run configuration: every tunable in one dataclass, loadable from a YAML file.

Config-file values are overridden by matching CLI flags; the effective config
is echoed into every emitted report for provenance.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import yaml

from .errors import ConfigError

FILTER_MODES = ("none", "confidence", "prototype", "double")
MEASURES = ("feature", "semantic", "multilevel")
ADAPTER_MODES = ("adapter", "adapter+cache")
OPTIMIZERS = ("sgd", "adam")
LR_SCHEDULES = ("constant", "cosine")


@dataclass
class RunConfig:
    # similarity / cache
    logit_scale: float = 100.0  # multiplier on cosines before softmax; 1.0 = unscaled
    top_k: int = 16  # confidence filter: samples kept per class
    protos_per_class: int = 8  # prototype filter: samples kept per class
    gamma: float = 1.0  # weight on the cache term when fusing with zero-shot logits
    proto_score_global: bool = False  # score prototypes against all confident samples
    filter_mode: str = "double"  # none | confidence | prototype | double
    measure: str = "multilevel"  # feature | semantic | multilevel
    # adapter training
    theta: float = 0.95  # confidence threshold for the pseudo-label CE mask
    alpha: float = 0.2  # residual ratio on image adapter
    beta: float = 0.5  # residual ratio on text adapter
    lambda_md: float = 1.0  # weight on the marginal-entropy loss
    hidden_ratio: int = 4  # adapter bottleneck divisor, hidden = dim // hidden_ratio
    optimizer: str = "sgd"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    lr_schedule: str = "constant"
    epochs: int = 10
    batch_size: int = 64
    adapter_mode: str = "adapter"  # adapter | adapter+cache
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.logit_scale <= 0:
            raise ConfigError(f"logit_scale must be > 0, got {self.logit_scale}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.protos_per_class < 1:
            raise ConfigError(f"protos_per_class must be >= 1, got {self.protos_per_class}")
        if self.top_k < self.protos_per_class:
            raise ConfigError(
                f"top_k ({self.top_k}) must be >= protos_per_class ({self.protos_per_class})"
            )
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not (0.0 < self.theta <= 1.0):
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lambda_md < 0:
            raise ConfigError(f"lambda_md must be >= 0, got {self.lambda_md}")
        if self.hidden_ratio < 1:
            raise ConfigError(f"hidden_ratio must be >= 1, got {self.hidden_ratio}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigError(f"filter_mode must be one of {FILTER_MODES}, got {self.filter_mode!r}")
        if self.measure not in MEASURES:
            raise ConfigError(f"measure must be one of {MEASURES}, got {self.measure!r}")
        if self.adapter_mode not in ADAPTER_MODES:
            raise ConfigError(
                f"adapter_mode must be one of {ADAPTER_MODES}, got {self.adapter_mode!r}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs).validate()


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    if value is None:
        raise ConfigError(f"config key {name!r} has empty value")
    kind = _FIELD_TYPES[name]
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
            raise ValueError(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {name!r} has invalid value {value!r}") from exc


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults <- YAML file <- explicit overrides."""
    values: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a flat key-value mapping")
        for key, value in doc.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return RunConfig(**values).validate()
