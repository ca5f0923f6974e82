"""Per-sample batch-handling strategies and their trigger heuristics.

Every strategy consumes one stream sample at a time through ``step`` and
returns a :class:`Decision`. When a decision carries ``retrain=True`` the
caller labels :meth:`Strategy.take_batch`, retrains, and calls ``rearm``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CandidateBatch, Sample
from .metrics import ObjectiveWeights, combined_objective, cosine_distance, diversity, entropy

log = logging.getLogger(__name__)

STRATEGIES = ("info_rv", "dual_rv", "preemption", "random")


class StrategyStateError(RuntimeError):
    """Step called on a strategy that is waiting for ``rearm``."""


@dataclass
class Decision:
    sample_id: int
    kept: bool
    trigger_fired: bool = False
    retrain: bool = False
    evicted: Sample | None = None
    informativeness: float | None = None
    diversity_after: float | None = None
    gamma: float | None = None
    delta: float | None = None
    calibrating: bool = False

    def __post_init__(self):
        if self.evicted is not None and not self.kept:
            raise ValueError("an eviction implies the incoming sample was kept")


class WindowTrigger:
    """Fires when exactly ``w`` samples were observed since the last reset."""

    def __init__(self, w: int):
        if w < 1:
            raise ValueError("window length must be >= 1")
        self.w = w
        self.seen = 0

    def observe(self, batch_size: int) -> bool:
        self.seen += 1
        return self.seen == self.w

    def reset(self) -> None:
        self.seen = 0


class BatchFillingTrigger:
    """Fires on the observation that brings the batch to ``k`` members."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("batch size must be >= 1")
        self.k = k
        self.seen = 0

    def observe(self, batch_size: int) -> bool:
        self.seen += 1
        return batch_size == self.k

    def reset(self) -> None:
        self.seen = 0


def calibrate_info_threshold(values: Sequence[float], j: int) -> float:
    """Mean of the ``j`` largest values."""
    if not 1 <= j <= len(values):
        raise ValueError(f"j={j} outside [1, {len(values)}]")
    top = sorted(values, reverse=True)[:j]
    return math.fsum(top) / j


def calibrate_div_threshold(features: Sequence[np.ndarray], q: int, r: int, j: int,
                            rng: np.random.Generator) -> float:
    """Diversity of ``r`` random ``q``-subsets of ``features``; mean of the ``j`` best."""
    l = len(features)
    if not 2 <= q <= l:
        raise ValueError(f"need 2 <= q <= l, got q={q}, l={l}")
    if not 1 <= j <= r:
        raise ValueError(f"need 1 <= j <= r, got j={j}, r={r}")
    results = []
    for _ in range(r):
        picks = rng.choice(l, size=q, replace=False)
        results.append(diversity([features[i] for i in picks]))
    return calibrate_info_threshold(results, j)


def _clamp_top_count(j: int, l: int, what: str) -> int:
    if j < 1:
        raise ValueError(f"{what}: j must be >= 1")
    if j > l:
        warnings.warn(f"{what}: j={j} exceeds l={l}; clamping j to {l}", stacklevel=3)
        return l
    return j


class Strategy:
    name = "base"

    def __init__(self, k: int):
        self.k = k
        self.batch = CandidateBatch(k)
        self._armed = True

    @property
    def ready(self) -> bool:
        """True once the strategy is in its steady selection phase."""
        return True

    def step(self, x: Sample, model) -> Decision:
        if not self._armed:
            raise StrategyStateError(f"{self.name}: retrain pending, call rearm() first")
        return self._step(x, model)

    def _step(self, x: Sample, model) -> Decision:
        raise NotImplementedError

    def take_batch(self) -> list[Sample]:
        return list(self.batch.samples)

    def rearm(self, model=None) -> None:
        self.batch.clear()
        self._armed = True


class InfoRV(Strategy):
    """Keep samples whose softmax entropy exceeds a per-model reference value.

    The reference value is the mean of the ``j`` largest entropies among the
    first ``l`` samples seen after each (re)training; those samples are not
    eligible for selection.
    """

    name = "info_rv"

    def __init__(self, k: int, l: int, j: int):
        super().__init__(k)
        if l < 1:
            raise ValueError("l must be >= 1")
        self.l = l
        self.j = _clamp_top_count(j, l, "info_rv")
        self.trigger = BatchFillingTrigger(k)
        self.gamma: float | None = None
        self.calib_buffer: list[float] = []

    @property
    def ready(self) -> bool:
        return self.gamma is not None

    def _step(self, x, model):
        info = entropy(model.predict_proba(x))
        if self.gamma is None:
            self.calib_buffer.append(info)
            if len(self.calib_buffer) == self.l:
                self.gamma = calibrate_info_threshold(self.calib_buffer, self.j)
                self.calib_buffer.clear()
            return Decision(x.id, False, informativeness=info, gamma=self.gamma, calibrating=True)
        kept = info > self.gamma
        if kept:
            self.batch.insert(x, score=info)
        fired = self.trigger.observe(len(self.batch))
        if fired:
            self._armed = False
        return Decision(x.id, kept, trigger_fired=fired, retrain=fired, informativeness=info, gamma=self.gamma)

    def rearm(self, model=None):
        super().rearm(model)
        self.trigger.reset()
        self.gamma = None
        self.calib_buffer.clear()


class DualRV(Strategy):
    """Entropy gate followed by a mean-pairwise-cosine diversity gate.

    Calibration runs in two phases after every (re)training: ``l_i`` samples
    for the entropy reference, then ``l_d`` samples whose features set the
    diversity reference. An empty batch admits any sample passing the entropy
    gate, since a single vector has zero diversity.
    """

    name = "dual_rv"

    def __init__(self, k: int, l_i: int, j_i: int, l_d: int, j_d: int, q: int, r: int, seed: int = 0):
        super().__init__(k)
        if l_i < 1:
            raise ValueError("l_i must be >= 1")
        if not 2 <= q <= l_d:
            raise ValueError(f"need 2 <= q <= l_d, got q={q}, l_d={l_d}")
        if not 1 <= j_d <= r:
            raise ValueError(f"need 1 <= j_d <= r, got j_d={j_d}, r={r}")
        self.l_i, self.j_i = l_i, _clamp_top_count(j_i, l_i, "dual_rv")
        self.l_d, self.j_d, self.q, self.r = l_d, j_d, q, r
        self.rng = np.random.default_rng(seed)
        self.trigger = BatchFillingTrigger(k)
        self.gamma: float | None = None
        self.delta: float | None = None
        self.info_buffer: list[float] = []
        self.feature_buffer: list[np.ndarray] = []
        self._pair_distances: list[float] = []

    @property
    def ready(self) -> bool:
        return self.gamma is not None and self.delta is not None

    def _step(self, x, model):
        if self.gamma is None:
            info = entropy(model.predict_proba(x))
            self.info_buffer.append(info)
            if len(self.info_buffer) == self.l_i:
                self.gamma = calibrate_info_threshold(self.info_buffer, self.j_i)
                self.info_buffer.clear()
            return Decision(x.id, False, informativeness=info, gamma=self.gamma, calibrating=True)
        if self.delta is None:
            prob, feature = model.proba_and_features(x)
            self.feature_buffer.append(feature)
            if len(self.feature_buffer) == self.l_d:
                self.delta = calibrate_div_threshold(self.feature_buffer, self.q, self.r, self.j_d, self.rng)
                self.feature_buffer.clear()
            return Decision(x.id, False, informativeness=entropy(prob), gamma=self.gamma,
                            delta=self.delta, calibrating=True)

        prob, feature = model.proba_and_features(x)
        info = entropy(prob)
        kept = False
        div = None
        if info > self.gamma:
            new_pairs = [cosine_distance(v, feature) for v in self.batch.features]
            n = len(self.batch) + 1
            div = math.fsum(self._pair_distances + new_pairs) / (n * (n - 1) // 2) if n > 1 else 0.0
            if len(self.batch) == 0 or div > self.delta:
                kept = True
                self.batch.insert(x, feature=feature, score=info)
                self._pair_distances.extend(new_pairs)
        fired = self.trigger.observe(len(self.batch))
        if fired:
            self._armed = False
        return Decision(x.id, kept, trigger_fired=fired, retrain=fired, informativeness=info,
                        diversity_after=div, gamma=self.gamma, delta=self.delta)

    def rearm(self, model=None):
        super().rearm(model)
        self.trigger.reset()
        self.gamma = None
        self.delta = None
        self.info_buffer.clear()
        self.feature_buffer.clear()
        self._pair_distances.clear()


class Preemption(Strategy):
    """Window-triggered swap-based batch construction.

    A full sub-batch adopts the best single swap with the incoming sample
    only when it strictly raises ``lambda_i * sum(entropy) +
    lambda_d * 0.5 logdet(I + alpha A)``. Each window of ``w`` samples yields
    one sub-batch; a retrain is requested after ``n_sub`` of them.
    """

    name = "preemption"

    def __init__(self, k_sub: int, w: int, n_sub: int = 1, weights: ObjectiveWeights = ObjectiveWeights()):
        super().__init__(k_sub)
        if n_sub < 1:
            raise ValueError("n_sub must be >= 1")
        self.k_sub = k_sub
        self.n_sub = n_sub
        self.weights = weights
        self.trigger = WindowTrigger(w)
        self.sub_batches: list[list[Sample]] = []
        self._incumbent: float | None = None

    @property
    def ready(self) -> bool:
        return self.batch.full

    @property
    def incumbent_objective(self) -> float:
        if self._incumbent is None:
            self._incumbent = combined_objective(self.batch.probs, self.batch.features, self.weights)
        return self._incumbent

    def _step(self, x, model):
        prob, feature = model.proba_and_features(x)
        info = entropy(prob)
        evicted = None
        if len(self.batch) < self.k_sub:
            self.batch.insert(x, feature=feature, prob=prob, score=info)
            self._incumbent = None
            kept = True
        else:
            best_index, best_value = self.best_swap(prob, feature)
            kept = best_index is not None and best_value > self.incumbent_objective
            if kept:
                evicted = self.batch.swap(best_index, x, feature=feature, prob=prob, score=info)
                self._incumbent = best_value
        fired = self.trigger.observe(len(self.batch))
        retrain = False
        if fired:
            self.sub_batches.append(list(self.batch.samples))
            self.batch.clear()
            self._incumbent = None
            self.trigger.reset()
            if len(self.sub_batches) == self.n_sub:
                retrain = True
                self._armed = False
        return Decision(x.id, kept, trigger_fired=fired, retrain=retrain, evicted=evicted,
                        informativeness=info)

    def best_swap(self, prob: np.ndarray, feature: np.ndarray) -> tuple[int | None, float]:
        """Highest-scoring single swap; the lowest index wins ties."""
        best_index, best_value = None, -math.inf
        for i in range(len(self.batch)):
            probs = list(self.batch.probs)
            feats = list(self.batch.features)
            probs[i], feats[i] = prob, feature
            value = combined_objective(probs, feats, self.weights)
            if value > best_value:
                best_index, best_value = i, value
        return best_index, best_value

    def take_batch(self) -> list[Sample]:
        return [s for sub in self.sub_batches for s in sub] + list(self.batch.samples)

    def rearm(self, model=None):
        super().rearm(model)
        self.trigger.reset()
        self.sub_batches.clear()
        self._incumbent = None


class RandomSampling(Strategy):
    """Keep each sample independently with probability ``p``."""

    name = "random"

    def __init__(self, k: int, p: float = 0.25, seed: int = 0):
        super().__init__(k)
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        self.p = p
        self.rng = np.random.default_rng(seed)
        self.trigger = BatchFillingTrigger(k)

    def _step(self, x, model=None):
        kept = bool(self.rng.random() < self.p)
        if kept:
            self.batch.insert(x)
        fired = self.trigger.observe(len(self.batch))
        if fired:
            self._armed = False
        return Decision(x.id, kept, trigger_fired=fired, retrain=fired)

    def rearm(self, model=None):
        super().rearm(model)
        self.trigger.reset()


def build_strategy(name: str, params: dict, seed: int = 0) -> Strategy:
    """Construct a strategy from flat hyperparameters (as in the experiment config)."""
    if name == "info_rv":
        return InfoRV(params["k"], params["l"], params["j"])
    if name == "dual_rv":
        return DualRV(params["k"], params["l"], params["j"], params["l_d"], params["j_d"],
                      params["q"], params["r"], seed=seed)
    if name == "preemption":
        weights = ObjectiveWeights(params["lambda_i"], params["lambda_d"], params["alpha"])
        return Preemption(params["k_sub"], params["w"], params["n_sub"], weights)
    if name == "random":
        return RandomSampling(params["k"], params["p"], seed=seed)
    raise ValueError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")
