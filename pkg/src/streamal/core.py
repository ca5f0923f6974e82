"""Data model shared by every other module: samples, datasets, streams, batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class BatchCapacityError(ValueError):
    """Raised on insertion into a full candidate batch or swap at a bad index."""


@dataclass(frozen=True, eq=False)
class Sample:
    """One stream element. Carries pixels only; labels live with the oracle."""

    id: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"sample {self.id}: expected (height, width, channels), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"sample {self.id}: non-finite pixel values")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError(f"sample {self.id}: pixel values outside [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def same_as(self, other: "Sample") -> bool:
        return self.id == other.id and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class LabeledSample:
    sample: Sample
    label: int


@dataclass(eq=False)
class Dataset:
    """An ordered, labelled collection sharing one image shape."""

    items: list[LabeledSample]
    class_count: int
    shape: tuple[int, int, int]
    _arrays: tuple[np.ndarray, np.ndarray] | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.items = list(self.items)
        self.shape = tuple(self.shape)
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        for item in self.items:
            if item.sample.shape != self.shape:
                raise ValueError(
                    f"sample {item.sample.id} has shape {item.sample.shape}, dataset expects {self.shape}"
                )
            if not 0 <= item.label < self.class_count:
                raise ValueError(f"sample {item.sample.id}: label {item.label} outside [0, {self.class_count})")

    @classmethod
    def from_arrays(cls, images: np.ndarray, labels: np.ndarray, class_count: int,
                    ids: Sequence[int] | None = None) -> "Dataset":
        """Build from an (N, H, W, C) array already scaled to [0, 1]."""
        images = np.asarray(images)
        labels = np.asarray(labels)
        if images.ndim != 4:
            raise ValueError(f"expected (N, H, W, C) images, got {images.shape}")
        if len(images) != len(labels):
            raise ValueError(f"{len(images)} images but {len(labels)} labels")
        if ids is None:
            ids = range(len(images))
        items = [LabeledSample(Sample(int(i), img), int(lab)) for i, img, lab in zip(ids, images, labels)]
        ds = cls(items, class_count, images.shape[1:])
        return ds

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, index):
        return self.items[index]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (images, labels); cached, since datasets are not mutated in place."""
        if self._arrays is None:
            if not self.items:
                x = np.zeros((0, *self.shape))
            else:
                x = np.stack([it.sample.data for it in self.items])
            y = np.array([it.label for it in self.items], dtype=np.int64)
            self._arrays = (x, y)
        return self._arrays

    def union(self, extra: Iterable[LabeledSample]) -> "Dataset":
        return Dataset(self.items + list(extra), self.class_count, self.shape)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset([self.items[i] for i in indices], self.class_count, self.shape)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.arrays()[1], minlength=self.class_count)


class DataStream:
    """Forward-only stream over labelled items with labels withheld.

    Only an :class:`~streamal.harness.oracle.Oracle` bound to the stream can
    read the hidden labels; consumers of :meth:`next` receive bare samples.
    """

    def __init__(self, source: Sequence[LabeledSample]):
        self.__source = list(source)
        self._cursor = 0

    def __len__(self) -> int:
        return len(self.__source)

    @property
    def cursor(self) -> int:
        return self._cursor

    @property
    def remaining(self) -> int:
        return len(self.__source) - self._cursor

    def next(self) -> Sample | None:
        if self._cursor >= len(self.__source):
            return None
        sample = self.__source[self._cursor].sample
        self._cursor += 1
        return sample

    def __iter__(self):
        while (sample := self.next()) is not None:
            yield sample

    def _hidden_labels(self) -> dict[int, int]:
        return {item.sample.id: item.label for item in self.__source}

    def _served_ids(self) -> set[int]:
        return {item.sample.id for item in self.__source[: self._cursor]}


def stream_next(stream: DataStream) -> Sample | None:
    return stream.next()


@dataclass
class CandidateBatch:
    """The batch under construction plus aligned per-member caches.

    ``features`` is either empty (strategies without a diversity term) or
    aligned one-to-one with ``samples``; ``probs`` and ``scores`` follow the
    same rule.
    """

    capacity: int
    samples: list[Sample] = field(default_factory=list)
    features: list[np.ndarray] = field(default_factory=list)
    probs: list[np.ndarray] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be non-negative")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def full(self) -> bool:
        return len(self.samples) >= self.capacity

    @property
    def ids(self) -> list[int]:
        return [s.id for s in self.samples]

    def insert(self, x: Sample, feature: np.ndarray | None = None,
               prob: np.ndarray | None = None, score: float | None = None) -> "CandidateBatch":
        if len(self.samples) >= self.capacity:
            raise BatchCapacityError(f"batch is full (capacity {self.capacity})")
        self._check_cache(self.features, feature, "feature")
        self._check_cache(self.probs, prob, "probability")
        self._check_cache(self.scores, score, "score")
        self.samples.append(x)
        if feature is not None:
            self.features.append(np.asarray(feature))
        if prob is not None:
            self.probs.append(np.asarray(prob))
        if score is not None:
            self.scores.append(float(score))
        return self

    def swap(self, index: int, x: Sample, feature: np.ndarray | None = None,
             prob: np.ndarray | None = None, score: float | None = None) -> Sample:
        """Replace member ``index`` in place and return the evicted sample."""
        if not 0 <= index < len(self.samples):
            raise BatchCapacityError(f"swap index {index} outside [0, {len(self.samples)})")
        for cache, value, name in ((self.features, feature, "feature"), (self.probs, prob, "probability"),
                                   (self.scores, score, "score")):
            if bool(cache) != (value is not None):
                raise ValueError(f"{name} cache and swap argument disagree")
        evicted = self.samples[index]
        self.samples[index] = x
        if feature is not None:
            self.features[index] = np.asarray(feature)
        if prob is not None:
            self.probs[index] = np.asarray(prob)
        if score is not None:
            self.scores[index] = float(score)
        return evicted

    def clear(self) -> None:
        self.samples.clear()
        self.features.clear()
        self.probs.clear()
        self.scores.clear()

    def _check_cache(self, cache: list, value, name: str) -> None:
        # A cache is either unused or aligned with samples.
        if self.samples and bool(cache) != (value is not None):
            raise ValueError(f"{name} cache would fall out of alignment with samples")


def batch_insert(batch: CandidateBatch, x: Sample, feature: np.ndarray | None = None) -> CandidateBatch:
    return batch.insert(x, feature)


def batch_swap(batch: CandidateBatch, index: int, x: Sample,
               feature: np.ndarray | None = None) -> CandidateBatch:
    batch.swap(index, x, feature)
    return batch
