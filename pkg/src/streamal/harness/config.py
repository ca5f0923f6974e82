"""Experiment configuration: a flat ``key = value`` text format.

Blank lines and ``#`` comments are ignored; unknown keys are errors. Later
assignments (including command-line overrides) replace earlier ones.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from ..model import TrainConfig, build_layers
from ..strategies import STRATEGIES

DATASETS = ("mnist", "fashion_mnist", "cifar10", "synthetic")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"
    data_dir: str = "."
    d0_size: int = 150
    stream_length: int = 0  # 0: the whole remaining training split
    strategy: str = "info_rv"
    # batch size for info_rv / dual_rv / random
    k: int = 32
    # info-threshold calibration (info_rv, dual_rv)
    l: int = 100
    j: int = 25
    # diversity-threshold calibration (dual_rv)
    l_d: int = 50
    j_d: int = 30
    q: int = 10
    r: int = 30
    # preemption
    w: int = 256
    k_sub: int = 16
    n_sub: int = 2
    lambda_i: float = 1.0
    lambda_d: float = 1.0
    alpha: float = 1.0
    # random baseline keep probability
    p: float = 0.25
    architecture: str = "mlp"
    epochs: int = 10
    batch_size: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    warm_start: bool = True
    trials: int = 10
    seed: int = 0
    retrain_limit: int = 3
    out: str = "results"
    timing: bool = False
    workers: int = 1
    synthetic_train: int = 2000
    synthetic_test: int = 500
    synthetic_classes: int = 6
    synthetic_side: int = 8
    synthetic_noise: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, key: str, msg: str):
            if not cond:
                raise ConfigError(f"{key}: {msg}", key)

        need(self.dataset in DATASETS, "dataset", f"expected one of {', '.join(DATASETS)}")
        need(self.strategy in STRATEGIES, "strategy", f"expected one of {', '.join(STRATEGIES)}")
        need(self.d0_size >= 1, "d0_size", "must be >= 1")
        need(self.stream_length >= 0, "stream_length", "must be >= 0")
        need(self.trials >= 1, "trials", "must be >= 1")
        need(self.retrain_limit >= 0, "retrain_limit", "must be >= 0")
        need(self.workers >= 1, "workers", "must be >= 1")
        need(self.k >= 1, "k", "must be >= 1")
        need(self.l >= 1, "l", "must be >= 1")
        need(self.j >= 1, "j", "must be >= 1")
        need(self.p >= 0 and self.p <= 1, "p", "must be in [0, 1]")
        if self.strategy == "dual_rv":
            need(2 <= self.q <= self.l_d, "q", "need 2 <= q <= l_d")
            need(1 <= self.j_d <= self.r, "j_d", "need 1 <= j_d <= r")
        if self.strategy == "preemption":
            need(self.w >= 1, "w", "must be >= 1")
            need(self.k_sub >= 1, "k_sub", "must be >= 1")
            need(self.n_sub >= 1, "n_sub", "must be >= 1")
        need(self.lambda_i >= 0, "lambda_i", "must be >= 0")
        need(self.lambda_d >= 0, "lambda_d", "must be >= 0")
        need(self.alpha > 0, "alpha", "must be > 0")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc), "epochs") from None
        try:
            build_layers(self.architecture, 10)
        except ValueError as exc:
            raise ConfigError(f"architecture: {exc}", "architecture") from None

    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.beta1, self.beta2,
                           self.epsilon, seed)

    def strategy_params(self) -> dict:
        keys = ("k", "l", "j", "l_d", "j_d", "q", "r", "w", "k_sub", "n_sub", "lambda_i", "lambda_d", "alpha", "p")
        return {key: getattr(self, key) for key in keys}

    def synthetic_options(self) -> dict:
        return {"train": self.synthetic_train, "test": self.synthetic_test,
                "classes": self.synthetic_classes, "side": self.synthetic_side,
                "noise": self.synthetic_noise}

    @property
    def batch_budget(self) -> int:
        """Labels requested per retraining."""
        return self.k_sub * self.n_sub if self.strategy == "preemption" else self.k

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


CONFIG_KEYS = tuple(f.name for f in fields(ExperimentConfig))
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}", key) from None
    return raw


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value", key or None)
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}", key)
        values[key] = _convert(key, raw)
    return values


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Read a config file (optional) and apply ``key=value`` overrides left to right."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_assignments(text.splitlines(), str(path)))
    values.update(parse_assignments(overrides, "<override>"))
    try:
        return ExperimentConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
