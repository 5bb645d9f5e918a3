"""Run configuration: hyperparameters, pipeline switches and ablation presets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

SAMPLING_MODES = ("adaptive", "uniform", "random", "erase", "none")
AGGREGATION_MODES = ("maximum", "average", "random")
SUPERVISION_MODES = ("mutual", "self", "none")
BRANCH_COUNTS = ("one", "dual")
SAMPLE_STRATEGIES = ("deterministic", "stochastic")


@dataclass
class Hyperparams:
    lambda_balance: float = 1.0
    beta_fusion: float = 0.15
    eta_sampling: float = 0.75
    interp_factor: int = 20
    theta_cls: float = 0.25
    theta_loc_factor: float = 0.7
    # T, D, C are taken from the dataset when left at 0
    T: int = 0
    D: int = 0
    C: int = 0
    hidden_dim: int = 64
    topk_divisor: int = 8
    dropout_rate: float = 0.5
    learning_rate: float = 3e-3
    phase0_epochs: int = 20
    phase_epochs: int = 5
    num_iterations: int = 3
    seed: int = 0

    def topk(self, T: int) -> int:
        return max(1, T // self.topk_divisor)

    def validate(self) -> None:
        if not self.eta_sampling > 0:
            raise ConfigError(f"eta_sampling must be > 0, got {self.eta_sampling}")
        if self.interp_factor < 1:
            raise ConfigError(f"interp_factor must be >= 1, got {self.interp_factor}")
        if not 0 < self.theta_cls < 1:
            raise ConfigError(f"theta_cls must lie in (0, 1), got {self.theta_cls}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.topk_divisor < 1 or self.hidden_dim < 1:
            raise ConfigError("topk_divisor and hidden_dim must be positive")
        for name in ("phase0_epochs", "phase_epochs", "num_iterations", "T", "D", "C"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")


@dataclass
class RunConfig(Hyperparams):
    dataset: str = ""
    out_dir: str = ""
    sampling_mode: str = "adaptive"
    aggregation_mode: str = "maximum"
    supervision_mode: str = "mutual"
    branch_count: str = "dual"
    sample_strategy: str = "deterministic"
    iou_thresholds: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    report_ranges: list = field(default_factory=lambda: [[0.1, 0.5], [0.3, 0.7], [0.1, 0.7]])

    def validate(self) -> None:
        super().validate()
        for name, allowed in (
            ("sampling_mode", SAMPLING_MODES),
            ("aggregation_mode", AGGREGATION_MODES),
            ("supervision_mode", SUPERVISION_MODES),
            ("branch_count", BRANCH_COUNTS),
            ("sample_strategy", SAMPLE_STRATEGIES),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name}={getattr(self, name)!r} not in {allowed}")
        if self.branch_count == "one" and self.supervision_mode == "mutual":
            raise ConfigError("mutual supervision needs two branches")
        if self.branch_count == "one" and self.sampling_mode != "none":
            raise ConfigError("a single branch has no sampler; use sampling_mode=none")
        if not self.iou_thresholds:
            raise ConfigError("iou_thresholds must be nonempty")
        for rng in self.report_ranges:
            if len(rng) != 2 or rng[0] > rng[1]:
                raise ConfigError(f"bad report range {rng!r}")

    @property
    def dual(self) -> bool:
        return self.branch_count == "dual"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known - {"preset"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        if "preset" in data:
            cfg = apply_preset(cfg, data["preset"])
        cfg = dataclasses.replace(cfg, **{k: v for k, v in data.items() if k != "preset"})
        return coerce(cfg)


# Table III style component switches: (branch_count, sampling_mode, supervision_mode)
PRESETS = {
    "A": ("one", "none", "none"),
    "B": ("dual", "none", "none"),
    "C": ("dual", "adaptive", "none"),
    "D": ("dual", "none", "self"),
    "E": ("dual", "none", "mutual"),
    "F": ("dual", "adaptive", "mutual"),
}


def apply_preset(cfg: RunConfig, name: str) -> RunConfig:
    try:
        branch, sampling, supervision = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return cfg.replace(branch_count=branch, sampling_mode=sampling, supervision_mode=supervision)


def coerce(cfg: RunConfig) -> RunConfig:
    """Cast every field to its declared scalar type; raises ConfigError on failure."""
    changes = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        kind = {"int": int, "float": float, "str": str}.get(f.type)
        if kind is None:
            continue
        try:
            if kind is int and isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            changes[f.name] = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{f.name}: cannot interpret {value!r} as {f.type}") from None
    return dataclasses.replace(cfg, **changes)


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = RunConfig.from_dict(data)
    cfg.validate()
    return cfg
