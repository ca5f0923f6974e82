from __future__ import annotations

import gzip
import io
from pathlib import Path

import numpy as np
import pytest

from streamal.core import Dataset, Sample
from streamal.harness.datasets import synthetic_dataset, write_idx


class TableModel:
    """Stands in for a classifier: looks up (probabilities, feature) by sample id."""

    def __init__(self, table: dict[int, tuple[np.ndarray, np.ndarray]]):
        self.table = table
        self.calls = 0

    def predict_proba(self, x):
        self.calls += 1
        return np.asarray(self.table[x.id][0], dtype=float)

    def extract_features(self, x):
        return np.asarray(self.table[x.id][1], dtype=float)

    def proba_and_features(self, x):
        self.calls += 1
        p, f = self.table[x.id]
        return np.asarray(p, dtype=float), np.asarray(f, dtype=float)


def make_samples(n: int, start: int = 0, shape=(2, 2, 1)) -> list[Sample]:
    rng = np.random.default_rng(start)
    return [Sample(start + i, rng.random(shape)) for i in range(n)]


def random_table(ids, classes: int = 4, dim: int = 5, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    table = {}
    for i in ids:
        logits = rng.normal(size=classes) * 2
        p = np.exp(logits - logits.max())
        table[i] = (p / p.sum(), rng.normal(size=dim))
    return table


@pytest.fixture
def samples():
    return make_samples


@pytest.fixture(scope="session")
def synthetic_split():
    return synthetic_dataset(600, seed=0), synthetic_dataset(200, seed=1)


def _mlxtend_mnist():
    """The 5000-sample MNIST subset shipped inside mlxtend (500 per class, raw 0-255)."""
    from importlib import resources

    raw = resources.files("mlxtend.data").joinpath("data/mnist_5k.csv.gz").read_bytes()
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",", dtype=np.uint8)
    return table[:, :-1].reshape(-1, 28, 28), table[:, -1]


def mnist_dir(tmp_root: Path) -> Path:
    """Directory holding MNIST IDX files.

    Uses $STREAMAL_MNIST_DIR when it contains the standard files; otherwise
    writes a stratified 4000/1000 train/test split of the mlxtend subset as
    IDX files so the loader path is exercised either way.
    """
    import os

    env = os.environ.get("STREAMAL_MNIST_DIR")
    if env and any(Path(env).glob("train-images*idx3*")):
        return Path(env)
    images, labels = _mlxtend_mnist()
    rng = np.random.default_rng(2024)
    test_idx = np.concatenate([rng.permutation(np.flatnonzero(labels == c))[:100] for c in range(10)])
    mask = np.zeros(len(labels), dtype=bool)
    mask[test_idx] = True
    out = tmp_root / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    write_idx(images[~mask], labels[~mask], out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte")
    write_idx(images[mask], labels[mask], out / "t10k-images-idx3-ubyte", out / "t10k-labels-idx1-ubyte")
    return out


@pytest.fixture(scope="session")
def mnist_files(tmp_path_factory):
    return mnist_dir(tmp_path_factory.mktemp("data"))


def tiny_dataset(n=20, seed=0) -> Dataset:
    """Two well-separated classes of 4x4 images."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    x = rng.uniform(0, 0.3, size=(n, 4, 4, 1))
    x[labels == 1, :2] += 0.6
    return Dataset.from_arrays(x, labels, 2)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
