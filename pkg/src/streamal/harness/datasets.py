"""Readers for IDX (MNIST-family) and CIFAR-10 binary files, plus a synthetic set."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import Dataset

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_SIDE = 32

# (shape, classes) per dataset name; synthetic depends on its config.
DATASET_SHAPES = {
    "mnist": ((28, 28, 1), 10),
    "fashion_mnist": ((28, 28, 1), 10),
    "cifar10": ((32, 32, 3), 10),
}


class DatasetFormatError(ValueError):
    pass


class BadMagicError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class CountMismatchError(DatasetFormatError):
    pass


class BadLabelError(DatasetFormatError):
    pass


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _idx_images(raw: bytes, path) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the IDX magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_IMAGE_MAGIC:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected image magic 0x{IDX_IMAGE_MAGIC:08x}")
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: truncated IDX image header")
    n, rows, cols = struct.unpack(">III", raw[4:16])
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, header promises {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols, 1)


def _idx_labels(raw: bytes, path) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the IDX magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_LABEL_MAGIC:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected label magic 0x{IDX_LABEL_MAGIC:08x}")
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: truncated IDX label header")
    (n,) = struct.unpack(">I", raw[4:8])
    if len(raw) < 8 + n:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, header promises {8 + n}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)


def load_idx(images_path: str | Path, labels_path: str | Path, class_count: int | None = None) -> Dataset:
    """Parse a big-endian IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _idx_images(_read_bytes(images_path), images_path)
    labels = _idx_labels(_read_bytes(labels_path), labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(f"{images_path} has {len(images)} images, {labels_path} has {len(labels)} labels")
    if class_count is None:
        class_count = int(labels.max()) + 1 if len(labels) else 1
    if len(labels) and labels.max() >= class_count:
        raise BadLabelError(f"{labels_path}: label {labels.max()} >= class count {class_count}")
    return Dataset.from_arrays(images.astype(np.float32) / 255.0, labels, class_count)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str | Path, labels_path: str | Path) -> None:
    """Write uint8 (N, H, W) or (N, H, W, 1) images and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim == 4:
        images = images[..., 0]
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    labels = np.asarray(labels, dtype=np.uint8)
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)) + labels.tobytes())


def load_cifar10(batch_paths: Sequence[str | Path]) -> Dataset:
    """Parse CIFAR-10 binary batches: 1 label byte + 3072 channel-planar pixel bytes per record."""
    images, labels = [], []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            raise TruncatedFileError(f"{path}: {len(raw)} bytes is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if len(records) and records[:, 0].max() >= 10:
            raise BadLabelError(f"{path}: label byte {records[:, 0].max()} >= 10")
        labels.append(records[:, 0])
        images.append(records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1))
    if not images:
        raise ValueError("no CIFAR-10 batch files given")
    x = np.concatenate(images).astype(np.float32) / 255.0
    return Dataset.from_arrays(x, np.concatenate(labels), 10)


def write_cifar10(images: np.ndarray, labels: np.ndarray, path: str | Path) -> None:
    """Inverse of :func:`load_cifar10` for uint8 (N, 32, 32, 3) images."""
    images = np.asarray(images, dtype=np.uint8)
    planar = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    records = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], planar], axis=1)
    Path(path).write_bytes(records.tobytes())


def synthetic_dataset(n: int, classes: int = 4, side: int = 8, seed: int = 0,
                      noise: float = 0.5, prototype_seed: int = 1234) -> Dataset:
    """Gaussian blobs rendered as ``side x side`` grayscale images.

    Each class is a sum of two Gaussian bumps at class-specific positions;
    samples add pixel noise and a random brightness. Prototypes depend only on
    ``prototype_seed`` so that train and test draws share classes.
    """
    proto_rng = np.random.default_rng(prototype_seed)
    yy, xx = np.mgrid[0:side, 0:side]
    prototypes = []
    for _ in range(classes):
        img = np.zeros((side, side))
        for cy, cx in proto_rng.uniform(0, side - 1, size=(2, 2)):
            img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (side / 6) ** 2))
        prototypes.append(img / img.max())
    prototypes = np.stack(prototypes)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n)
    scale = rng.uniform(0.6, 1.0, size=(n, 1, 1))
    x = prototypes[labels] * scale + rng.normal(0, noise, size=(n, side, side))
    x = np.clip(x, 0.0, 1.0)[..., None]
    return Dataset.from_arrays(x, labels, classes)


def _first_existing(directory: Path, names: Sequence[str]) -> Path:
    for name in names:
        for candidate in (directory / name, directory / f"{name}.gz"):
            if candidate.exists():
                return candidate
    raise FileNotFoundError(f"none of {list(names)} (or .gz) found in {directory}")


def load_named(dataset: str, data_dir: str | Path = ".", synthetic: dict | None = None) -> tuple[Dataset, Dataset]:
    """Standard (train, test) split for a dataset name."""
    data_dir = Path(data_dir)
    if dataset in ("mnist", "fashion_mnist"):
        train = load_idx(_first_existing(data_dir, ["train-images-idx3-ubyte", "train-images.idx3-ubyte"]),
                         _first_existing(data_dir, ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"]), 10)
        test = load_idx(_first_existing(data_dir, ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"]),
                        _first_existing(data_dir, ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"]), 10)
        return train, test
    if dataset == "cifar10":
        if (data_dir / "cifar-10-batches-bin").is_dir():
            data_dir = data_dir / "cifar-10-batches-bin"
        train = load_cifar10([_first_existing(data_dir, [f"data_batch_{i}.bin"]) for i in range(1, 6)])
        test = load_cifar10([_first_existing(data_dir, ["test_batch.bin"])])
        return train, test
    if dataset == "synthetic":
        opts = dict(synthetic or {})
        n_train = opts.pop("train", 2000)
        n_test = opts.pop("test", 500)
        seed = opts.pop("seed", 0)
        train = synthetic_dataset(n_train, seed=seed, **opts)
        test = synthetic_dataset(n_test, seed=seed + 1, **opts)
        return train, test
    raise ValueError(f"unknown dataset {dataset!r}")
