"""Flat run configuration: defaults < config file < command-line overrides."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .cuenet import CueNetConfig
from .distill import TrainerConfig
from .losses import LossWeights
from .redts import RewardConfig

OUT_ENV = "REMTKD_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # output
    out: str = ""
    # dataset
    seed: int = 0
    size: int = 64
    n_train: int = 400
    n_test: int = 200
    edge_width: int = 2
    # optimisation
    teacher_epochs: int = 15
    epochs: int = 8
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.01
    update_interval: int = 0          # 0 means 10 * batch_size
    # strategy
    strategy: str = "redts"
    single_teacher: str = ""
    reward: str = "reward3"
    gamma: float = 0.2
    soft: str = "soft3"
    # loss weights
    alpha: float = 1.0
    beta: float = 0.2
    lambda0_s: float = 0.1
    omega: float = 0.05
    omega_scaling: str = "multiply_by_selected"
    # policy
    policy_lr: float = 3e-4
    policy_grad: str = "prob"
    policy_baseline: bool = False
    warmup_windows: int = 2
    # model
    stage_channels: tuple = (16, 32, 64, 128)
    d: int = 128
    eam_channels: int = 16
    # evaluation
    threshold: float = 0.5

    def __post_init__(self):
        if not self.out:
            self.out = os.environ.get(OUT_ENV, "runs")
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if self.reward in ("1", "2", "3"):
            self.reward = f"reward{self.reward}"
        if self.soft in ("1", "2", "3"):
            self.soft = f"soft{self.soft}"
        try:
            self.trainer()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def model(self) -> CueNetConfig:
        return CueNetConfig(stage_channels=self.stage_channels, d=self.d, eam_channels=self.eam_channels)

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.lambda0_s, self.omega, self.omega_scaling)

    def trainer(self, *, strategy: str | None = None, epochs: int | None = None, seed_offset: int = 0,
                single_teacher: str | None = None) -> TrainerConfig:
        strategy = strategy or self.strategy
        return TrainerConfig(
            epochs=self.epochs if epochs is None else epochs,
            batch_size=self.batch_size, lr=self.lr, weight_decay=self.weight_decay,
            update_interval=self.update_interval or None, strategy=strategy,
            single_teacher=(single_teacher or self.single_teacher or None) if strategy == "single" else None,
            reward=RewardConfig(self.reward, self.gamma), soft_variant=self.soft,
            weights=self.weights(), seed=self.seed * 1000 + seed_offset, model=self.model(),
            policy_lr=self.policy_lr, policy_grad=self.policy_grad,
            policy_baseline=self.policy_baseline, warmup_windows=self.warmup_windows,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    kind = FIELD_TYPES[key]
    if isinstance(value, str):
        if kind == "bool":
            low = value.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ConfigError(f"{key}: expected a boolean, got {value!r}")
            return low in ("1", "true", "yes")
        if kind == "tuple":
            return tuple(int(v) for v in value.replace("[", "").replace("]", "").split(",") if v.strip())
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value
    if kind == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind == "str" and isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    return value


def _check_keys(mapping: dict, origin: str):
    unknown = sorted(set(mapping) - set(FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key(s) in {origin}: {', '.join(unknown)}")


def read_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _check_keys(data, str(path))
    return data


def parse_overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    _check_keys(out, "overrides")
    return out


def resolve(file: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    merged = {}
    if file is not None:
        merged.update(read_file(file))
    if overrides:
        _check_keys(overrides, "overrides")
        merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        values = {k: _coerce(k, v) for k, v in merged.items()}
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return RunConfig(**values)
