"""Stream active-learning experiment loop.

Per trial: shuffle the training split, pre-train on the first ``d0_size``
items, stream the rest through the strategy, and on every retrain event
label the selected batch, grow the dataset, retrain and evaluate.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import DataStream, Dataset, LabeledSample, Sample
from ..model import Model, TrainingDivergedError, build_layers, evaluate, train
from ..strategies import Decision, build_strategy
from .config import ExperimentConfig
from .datasets import load_named
from .oracle import Oracle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentRecord:
    trial: int
    retrain_index: int
    samples_seen: int
    labels_spent: int
    dataset_size: int
    test_accuracy: float
    mean_decision_time_s: float | None = None
    retrain_time_s: float | None = None


@dataclass(frozen=True)
class DecisionRecord:
    trial: int
    decision: Decision


@dataclass(frozen=True)
class TrialFailure:
    trial: int
    retrain_index: int
    message: str


@dataclass
class ExperimentResult:
    records: list[ExperimentRecord] = field(default_factory=list)
    decisions: list[DecisionRecord] = field(default_factory=list)
    failures: list[TrialFailure] = field(default_factory=list)
    # stream ids labelled per trial, in labelling order
    labelled_ids: dict[int, list[int]] = field(default_factory=dict)

    def extend(self, other: "ExperimentResult") -> None:
        self.records.extend(other.records)
        self.decisions.extend(other.decisions)
        self.failures.extend(other.failures)
        self.labelled_ids.update(other.labelled_ids)


def trial_seeds(base_seed: int, trial: int) -> dict[str, int]:
    """Independent integer seeds for one trial, shared across strategies."""
    state = np.random.SeedSequence([base_seed, trial]).generate_state(4)
    return dict(zip(("shuffle", "init", "train", "strategy"), (int(s) for s in state)))


def split_for_trial(train_set: Dataset, cfg: ExperimentConfig, seed: int) -> tuple[Dataset, DataStream]:
    """Seeded shuffle; the first ``d0_size`` items pre-train, the rest form the stream."""
    if cfg.d0_size >= len(train_set):
        raise ValueError(f"d0_size {cfg.d0_size} leaves no stream in a {len(train_set)}-item split")
    order = np.random.default_rng(seed).permutation(len(train_set))
    d0 = train_set.subset(order[:cfg.d0_size])
    rest = order[cfg.d0_size:]
    if cfg.stream_length:
        rest = rest[:cfg.stream_length]
    source = [LabeledSample(Sample(t, train_set[i].sample.data), train_set[i].label) for t, i in enumerate(rest)]
    return d0, DataStream(source)


def run_trial(cfg: ExperimentConfig, trial: int, train_set: Dataset, test_set: Dataset) -> ExperimentResult:
    seeds = trial_seeds(cfg.seed, trial)
    result = ExperimentResult()
    d0, stream = split_for_trial(train_set, cfg, seeds["shuffle"])
    oracle = Oracle(stream)
    layers = build_layers(cfg.architecture, train_set.class_count)
    model = Model(layers, train_set.shape, seed=seeds["init"])
    dataset = d0
    n = 0
    try:
        t0 = time.perf_counter()
        model, _ = train(model, d0, cfg.train_config(seeds["train"]), warm_start=False)
        retrain_time = time.perf_counter() - t0
    except TrainingDivergedError as exc:
        result.failures.append(TrialFailure(trial, 0, str(exc)))
        return result
    result.records.append(ExperimentRecord(
        trial, 0, 0, 0, len(dataset), evaluate(model, test_set),
        None, retrain_time if cfg.timing else None))
    labelled: list[int] = []
    strategy = build_strategy(cfg.strategy, cfg.strategy_params(), seed=seeds["strategy"])
    decision_times: list[float] = []
    while n < cfg.retrain_limit:
        x = stream.next()
        if x is None:
            log.info("trial %d: stream exhausted after %d retrains", trial, n)
            break
        was_ready = strategy.ready
        t0 = time.perf_counter()
        decision = strategy.step(x, model)
        elapsed = time.perf_counter() - t0
        if was_ready:
            decision_times.append(elapsed)
        result.decisions.append(DecisionRecord(trial, decision))
        if not decision.retrain:
            continue
        batch = strategy.take_batch()
        labels = oracle.label([s.id for s in batch])
        labelled.extend(s.id for s in batch)
        dataset = dataset.union(LabeledSample(s, lab) for s, lab in zip(batch, labels))
        n += 1
        try:
            t0 = time.perf_counter()
            model, _ = train(model, dataset, cfg.train_config(seeds["train"] + n), warm_start=cfg.warm_start)
            retrain_time = time.perf_counter() - t0
        except TrainingDivergedError as exc:
            log.error("trial %d: training diverged at retrain %d: %s", trial, n, exc)
            result.failures.append(TrialFailure(trial, n, str(exc)))
            break
        assert oracle.query_count == len(dataset) - len(d0)
        mean_time = float(np.mean(decision_times)) if cfg.timing and decision_times else None
        result.records.append(ExperimentRecord(
            trial, n, stream.cursor, oracle.query_count, len(dataset), evaluate(model, test_set),
            mean_time, retrain_time if cfg.timing else None))
        decision_times = []
        strategy.rearm(model)
    result.labelled_ids[trial] = labelled
    return result


def _run_trial_job(args):
    return run_trial(*args)


def run_experiment(cfg: ExperimentConfig, train_set: Dataset | None = None,
                   test_set: Dataset | None = None) -> ExperimentResult:
    """Run ``cfg.trials`` independent trials; deterministic given ``cfg.seed``."""
    if train_set is None or test_set is None:
        loaded = load_named(cfg.dataset, cfg.data_dir, cfg.synthetic_options())
        train_set = loaded[0] if train_set is None else train_set
        test_set = loaded[1] if test_set is None else test_set
    if train_set.class_count != test_set.class_count or train_set.shape != test_set.shape:
        raise ValueError("train and test splits disagree on shape or class count")
    result = ExperimentResult()
    jobs = [(cfg, t, train_set, test_set) for t in range(cfg.trials)]
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for part in pool.map(_run_trial_job, jobs):
                result.extend(part)
    else:
        for job in jobs:
            result.extend(_run_trial_job(job))
    return result
