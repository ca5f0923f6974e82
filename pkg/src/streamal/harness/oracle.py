from __future__ import annotations

from typing import Iterable

from ..core import DataStream


class UnknownSampleError(KeyError):
    pass


class Oracle:
    """Simulated annotator holding the stream's hidden labels.

    Only ids the stream has already served can be queried; every released
    label is charged to ``query_count``.
    """

    def __init__(self, stream: DataStream):
        self._stream = stream
        self._labels = stream._hidden_labels()
        self.query_count = 0

    def label(self, ids: Iterable[int]) -> list[int]:
        ids = list(ids)
        served = self._stream._served_ids() if ids else set()
        for i in ids:
            if i not in self._labels:
                raise UnknownSampleError(f"stream id {i} does not exist")
            if i not in served:
                raise UnknownSampleError(f"stream id {i} has not been served yet")
        self.query_count += len(ids)
        return [self._labels[i] for i in ids]


def oracle_label(oracle: Oracle, ids: Iterable[int]) -> list[int]:
    return oracle.label(ids)
