import gzip
import struct

import numpy as np
import pytest

from streamal.core import DataStream, LabeledSample
from streamal.harness import (
    ConfigError,
    ExperimentConfig,
    MemoryModel,
    Oracle,
    UnknownSampleError,
    account_memory,
    estimate_mcu_time,
    load_config,
    read_csv,
    run_experiment,
    write_results,
)
from streamal.harness.datasets import (
    BadMagicError,
    CountMismatchError,
    TruncatedFileError,
    load_cifar10,
    load_idx,
    load_named,
    synthetic_dataset,
    write_cifar10,
    write_idx,
)
from streamal.harness.experiment import split_for_trial, trial_seeds
from streamal.harness.resources import measure_decision_time
from streamal.harness.results import RECORD_COLUMNS, DECISION_COLUMNS, SUMMARY_COLUMNS
from streamal.strategies import InfoRV

from conftest import TableModel, make_samples, random_table


# dataset readers

def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(7, 5, 4), dtype=np.uint8)
    labels = np.array([0, 1, 2, 3, 4, 5, 9], dtype=np.uint8)
    write_idx(images, labels, tmp_path / "img", tmp_path / "lab")
    ds = load_idx(tmp_path / "img", tmp_path / "lab", class_count=10)
    x, y = ds.arrays()
    assert x.shape == (7, 5, 4, 1)
    assert np.array_equal(np.rint(x[..., 0] * 255).astype(np.uint8), images)
    assert list(y) == list(labels)
    # gzip is transparent
    for name in ("img", "lab"):
        (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
    gz = load_idx(tmp_path / "img.gz", tmp_path / "lab.gz", class_count=10)
    assert np.array_equal(gz.arrays()[0], x)


def test_idx_rejects_bad_files(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    write_idx(images, [0, 1, 0], tmp_path / "img", tmp_path / "lab")
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "bad").write_bytes(struct.pack(">I", 0x0801) + raw[4:])
    with pytest.raises(BadMagicError):
        load_idx(tmp_path / "bad", tmp_path / "lab")
    (tmp_path / "short").write_bytes(raw[:-1])
    with pytest.raises(TruncatedFileError):
        load_idx(tmp_path / "short", tmp_path / "lab")
    write_idx(images, [0, 1], tmp_path / "img2", tmp_path / "lab2")
    with pytest.raises(CountMismatchError):
        load_idx(tmp_path / "img", tmp_path / "lab2")


def test_cifar_round_trip_and_truncation(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, size=(4, 32, 32, 3), dtype=np.uint8)
    labels = np.array([3, 0, 9, 1])
    write_cifar10(images, labels, tmp_path / "data_batch_1.bin")
    ds = load_cifar10([tmp_path / "data_batch_1.bin"])
    x, y = ds.arrays()
    assert x.shape == (4, 32, 32, 3)
    assert np.array_equal(np.rint(x * 255).astype(np.uint8), images)
    assert list(y) == list(labels)
    raw = (tmp_path / "data_batch_1.bin").read_bytes()
    # channel-planar layout: first record's red plane follows the label byte
    assert raw[1] == images[0, 0, 0, 0] and raw[1 + 1024] == images[0, 0, 0, 1]
    (tmp_path / "cut.bin").write_bytes(raw[:-10])
    with pytest.raises(TruncatedFileError):
        load_cifar10([tmp_path / "cut.bin"])


def test_load_named_standard_files(mnist_files):
    train, test = load_named("mnist", mnist_files)
    assert train.shape == test.shape == (28, 28, 1)
    assert train.class_count == 10
    assert len(test) >= 1000


def test_synthetic_is_deterministic_and_valid():
    a, b = synthetic_dataset(50, seed=3), synthetic_dataset(50, seed=3)
    assert np.array_equal(a.arrays()[0], b.arrays()[0])
    x, y = a.arrays()
    assert x.min() >= 0 and x.max() <= 1
    assert set(y) <= set(range(4))


# oracle

def test_oracle_labels_only_served_ids():
    stream = DataStream([LabeledSample(s, s.id % 2) for s in make_samples(4)])
    oracle = Oracle(stream)
    assert oracle.label([]) == []
    assert oracle.query_count == 0
    with pytest.raises(UnknownSampleError):
        oracle.label([0])
    stream.next(), stream.next()
    assert oracle.label([1, 0]) == [1, 0]
    assert oracle.query_count == 2
    with pytest.raises(UnknownSampleError):
        oracle.label([17])


# resources

@pytest.mark.parametrize("dataset, strategy, expected", [
    ("mnist", "info_rv", 25088),
    ("mnist", "dual_rv", 50688),
    ("mnist", "preemption", 53072),
    ("fashion_mnist", "info_rv", 25088),
    ("fashion_mnist", "dual_rv", 98816),
    ("fashion_mnist", "preemption", 104208),
])
def test_memory_accounting(dataset, strategy, expected):
    mf = {"mnist": 200, "fashion_mnist": 576}[dataset]
    assert account_memory(strategy, MemoryModel.for_shape(32, (28, 28, 1), mf)) == expected


def test_memory_accounting_k_zero_and_monotone():
    assert account_memory("info_rv", MemoryModel(0, 784, 800)) == 0
    assert account_memory("dual_rv", MemoryModel(0, 784, 800)) == 0
    assert account_memory("preemption", MemoryModel(0, 784, 800)) == 784 + 2 * 800
    values = [account_memory("dual_rv", MemoryModel(k, 784, 800)) for k in range(10)]
    assert values == sorted(values)
    with pytest.raises(ValueError):
        account_memory("greedy", MemoryModel(1, 1, 1))


def test_mcu_estimate():
    assert round(estimate_mcu_time(0.1494), 4) == 0.7470
    assert round(estimate_mcu_time(2.5593), 4) == 12.7965
    with pytest.raises(ValueError):
        estimate_mcu_time(1.0, target_clock_hz=0)


def test_measure_decision_time_skips_calibration():
    table = random_table(range(30))
    s = InfoRV(k=2, l=5, j=1)
    t = measure_decision_time(s, TableModel(table), make_samples(30), min_decisions=10)
    assert t > 0


# config

def test_config_overrides_compose_left_to_right(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\nk = 8\nstrategy = random\n")
    cfg = load_config(path, ["k=4", "k=16", "p=0.5"])
    assert (cfg.k, cfg.strategy, cfg.p) == (16, "random", 0.5)
    with pytest.raises(ConfigError) as err:
        load_config(None, ["bogus=1"])
    assert err.value.key == "bogus"
    with pytest.raises(ConfigError):
        load_config(None, ["k=0"])
    with pytest.raises(ConfigError):
        load_config(None, ["strategy=dual_rv", "q=1"])


def test_config_text_round_trip(tmp_path):
    cfg = ExperimentConfig(strategy="preemption", k_sub=4, timing=True)
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg
    assert cfg.batch_budget == 8


# experiment loop

def small_cfg(**changes):
    base = dict(dataset="synthetic", d0_size=40, k=8, l=20, j=5, l_d=10, j_d=3, q=3, r=5,
                w=30, k_sub=4, n_sub=2, epochs=2, trials=2, retrain_limit=3,
                architecture="mlp:16")
    base.update(changes)
    return ExperimentConfig(**base)


@pytest.mark.parametrize("strategy", ["info_rv", "dual_rv", "preemption", "random"])
def test_budget_conservation(synthetic_split, strategy):
    cfg = small_cfg(strategy=strategy)
    res = run_experiment(cfg, *synthetic_split)
    assert not res.failures
    for r in res.records:
        assert r.dataset_size == cfg.d0_size + r.labels_spent
        assert r.labels_spent == r.retrain_index * cfg.batch_budget
    for trial, ids in res.labelled_ids.items():
        assert len(ids) == len(set(ids))


def test_labels_spent_progression(synthetic_split):
    cfg = small_cfg(strategy="random", p=1.0, k=32, d0_size=150, trials=1)
    res = run_experiment(cfg, *synthetic_split)
    assert [r.labels_spent for r in res.records] == [0, 32, 64, 96]
    assert res.labelled_ids[0] == list(range(96))
    assert [r.samples_seen for r in res.records] == [0, 32, 64, 96]


def test_retrain_limit_zero_queries_nothing(synthetic_split):
    res = run_experiment(small_cfg(retrain_limit=0), *synthetic_split)
    assert [(r.retrain_index, r.labels_spent) for r in res.records] == [(0, 0), (0, 0)]
    assert all(ids == [] for ids in res.labelled_ids.values())


def test_experiment_is_deterministic(synthetic_split):
    cfg = small_cfg(strategy="dual_rv")
    a, b = run_experiment(cfg, *synthetic_split), run_experiment(cfg, *synthetic_split)
    assert a.records == b.records
    assert a.labelled_ids == b.labelled_ids


def test_trial_seeds_differ_per_trial_and_match_across_strategies(synthetic_split):
    assert trial_seeds(0, 0) != trial_seeds(0, 1)
    train, _ = synthetic_split
    cfg = small_cfg()
    d0a, sa = split_for_trial(train, cfg, trial_seeds(0, 0)["shuffle"])
    d0b, sb = split_for_trial(train, cfg.replace(strategy="random"), trial_seeds(0, 0)["shuffle"])
    assert np.array_equal(d0a.arrays()[0], d0b.arrays()[0])
    assert sa.remaining == sb.remaining


def test_no_label_leakage_in_first_round(synthetic_split):
    """Relabelling the stream must not change anything up to the first retrain."""
    train, test = synthetic_split
    cfg = small_cfg(strategy="info_rv", trials=1, retrain_limit=1)
    base = run_experiment(cfg, train, test)
    x, y = train.arrays()
    # shift every stream label; pre-training items keep theirs
    seeds = trial_seeds(cfg.seed, 0)
    order = np.random.default_rng(seeds["shuffle"]).permutation(len(train))
    y2 = (y + 1) % train.class_count
    y2[order[:cfg.d0_size]] = y[order[:cfg.d0_size]]
    scrambled = type(train).from_arrays(x, y2, train.class_count)
    other = run_experiment(cfg, scrambled, test)
    first = lambda res: [(d.decision.sample_id, d.decision.kept, d.decision.informativeness)
                         for d in res.decisions]
    assert first(base) == first(other)
    assert base.labelled_ids == other.labelled_ids


def test_write_results_layout_and_determinism(tmp_path, synthetic_split):
    res = run_experiment(small_cfg(strategy="dual_rv"), *synthetic_split)
    write_results(res.records, res.decisions, tmp_path / "a")
    write_results(res.records, res.decisions, tmp_path / "b")
    for name in ("records.csv", "decisions.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    records = read_csv(tmp_path / "a" / "records.csv")
    assert list(records[0]) == list(RECORD_COLUMNS)
    assert len(records) == len(res.records)
    decisions = read_csv(tmp_path / "a" / "decisions.csv")
    assert list(decisions[0]) == list(DECISION_COLUMNS)
    summary = read_csv(tmp_path / "a" / "summary.csv")
    assert list(summary[0]) == list(SUMMARY_COLUMNS)
    acc = [r.test_accuracy for r in res.records if r.retrain_index == 0]
    assert float(summary[0]["mean_accuracy"]) == pytest.approx(np.mean(acc))
    assert float(summary[0]["var_accuracy"]) == pytest.approx(np.var(acc))


def test_write_results_empty_gives_headers_only(tmp_path):
    write_results([], [], tmp_path)
    for name, cols in (("records.csv", RECORD_COLUMNS), ("decisions.csv", DECISION_COLUMNS),
                       ("summary.csv", SUMMARY_COLUMNS)):
        assert (tmp_path / name).read_text().splitlines() == [",".join(cols)]
