"""Memory formulas, per-decision timing and the clock-ratio MCU estimate."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..core import Sample
from ..strategies import STRATEGIES, Strategy

IMAGE_BYTES_PER_PIXEL = 1
FEATURE_BYTES = 4

# Flatten-layer lengths of the reference CNN for each dataset.
REFERENCE_FEATURE_LENGTH = {"mnist": 200, "fashion_mnist": 576, "cifar10": 1600}

HOST_CLOCK_HZ = 2.40e9
NICLA_CLOCK_HZ = 0.48e9


@dataclass(frozen=True)
class MemoryModel:
    k: int
    image_bytes: int
    feature_bytes: int

    @classmethod
    def for_shape(cls, k: int, shape: tuple[int, int, int], feature_length: int) -> "MemoryModel":
        h, w, c = shape
        return cls(k, h * w * c * IMAGE_BYTES_PER_PIXEL, feature_length * FEATURE_BYTES)

    def __post_init__(self):
        if self.k < 0 or self.image_bytes < 0 or self.feature_bytes < 0:
            raise ValueError("memory model fields must be non-negative")


def memory_formula(strategy: str) -> str:
    return {
        "preemption": "(k+1)*M_I + (k+2)*M_f",
        "dual_rv": "k*M_I + k*M_f",
        "info_rv": "k*M_I",
        "random": "k*M_I",
    }[strategy]


def account_memory(strategy: str, mem: MemoryModel) -> int:
    """Strategy-only buffer bytes (the network itself is excluded)."""
    k, mi, mf = mem.k, mem.image_bytes, mem.feature_bytes
    if strategy == "preemption":
        return (k + 1) * mi + (k + 2) * mf
    if strategy == "dual_rv":
        return k * mi + k * mf
    if strategy in ("info_rv", "random"):
        return k * mi
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")


def measure_decision_time(strategy: Strategy, model, samples: Iterable[Sample], min_decisions: int = 200) -> float:
    """Mean wall-clock seconds per steady-state decision.

    Calibration steps (and, for preemption, the fill-up steps) are run but
    not timed. Forward passes needed by the decision are included. On a
    retrain event the strategy is re-armed against the same model, so no
    training time is ever measured. ``samples`` is cycled if it runs out.
    """
    if min_decisions < 1:
        raise ValueError("min_decisions must be >= 1")
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to time")
    timed = []
    for x in itertools.cycle(samples):
        ready = strategy.ready
        t0 = time.perf_counter()
        decision = strategy.step(x, model)
        elapsed = time.perf_counter() - t0
        if ready:
            timed.append(elapsed)
        if decision.retrain:
            strategy.take_batch()
            strategy.rearm(model)
        if len(timed) >= min_decisions:
            break
    return float(np.mean(timed))


def estimate_mcu_time(t_host: float, host_clock_hz: float = HOST_CLOCK_HZ,
                      target_clock_hz: float = NICLA_CLOCK_HZ) -> float:
    """Scale a host timing by the clock ratio host/target."""
    if host_clock_hz <= 0 or target_clock_hz <= 0:
        raise ValueError("clock rates must be positive")
    return t_host * host_clock_hz / target_clock_hz
