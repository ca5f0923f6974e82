import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamal.core import (
    BatchCapacityError,
    CandidateBatch,
    DataStream,
    Dataset,
    LabeledSample,
    Sample,
    batch_insert,
    batch_swap,
    stream_next,
)

from conftest import make_samples


def labeled(n):
    return [LabeledSample(s, s.id % 3) for s in make_samples(n)]


def test_stream_serves_in_order_then_exhausts():
    stream = DataStream(labeled(3))
    assert [stream_next(stream).id for _ in range(3)] == [0, 1, 2]
    assert stream_next(stream) is None
    assert stream_next(stream) is None


def test_stream_hides_labels():
    stream = DataStream(labeled(2))
    x = stream.next()
    assert isinstance(x, Sample)
    assert not hasattr(x, "label")


@given(st.lists(st.booleans(), max_size=30), st.integers(0, 20))
def test_stream_forward_only(pattern, n):
    stream = DataStream(labeled(n))
    served = []
    for use_iter in pattern:
        x = next(iter(stream), None) if use_iter else stream.next()
        if x is not None:
            served.append(x.id)
    assert served == list(range(len(served)))
    assert len(set(served)) == len(served)


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample(0, np.full((2, 2, 1), 1.5))
    with pytest.raises(ValueError):
        Sample(0, np.full((2, 2, 1), np.nan))
    with pytest.raises(ValueError):
        Sample(0, np.zeros((4, 4)))


def test_dataset_rejects_mixed_shapes_and_bad_labels():
    a, b = make_samples(1)[0], make_samples(1, start=5, shape=(3, 3, 1))[0]
    with pytest.raises(ValueError):
        Dataset([LabeledSample(a, 0), LabeledSample(b, 0)], 2, (2, 2, 1))
    with pytest.raises(ValueError):
        Dataset([LabeledSample(a, 2)], 2, (2, 2, 1))


def test_batch_insert_and_capacity():
    batch = CandidateBatch(2)
    s = make_samples(3)
    batch_insert(batch, s[0])
    assert len(batch) == 1
    batch_insert(batch, s[1])
    with pytest.raises(BatchCapacityError):
        batch_insert(batch, s[2])


def test_insert_with_feature_keeps_alignment():
    batch = CandidateBatch(3)
    for s in make_samples(2):
        batch_insert(batch, s, np.ones(4))
    assert len(batch.features) == len(batch.samples) == 2
    with pytest.raises(ValueError):
        batch_insert(batch, make_samples(1, start=9)[0])


def test_swap_preserves_size_and_is_reversible():
    s = make_samples(3)
    batch = CandidateBatch(2)
    batch_insert(batch, s[0], np.zeros(2))
    batch_insert(batch, s[1], np.ones(2))
    before = (list(batch.ids), [f.copy() for f in batch.features])
    batch_swap(batch, 0, s[2], np.full(2, 5.0))
    assert len(batch) == 2 and batch.ids == [2, 1]
    batch_swap(batch, 0, s[0], np.zeros(2))
    assert batch.ids == before[0]
    assert all(np.array_equal(a, b) for a, b in zip(batch.features, before[1]))
    with pytest.raises(BatchCapacityError):
        batch_swap(batch, 2, s[2], np.zeros(2))


@settings(max_examples=60)
@given(st.integers(1, 5), st.lists(st.tuples(st.sampled_from(["insert", "swap"]), st.integers(0, 6)), max_size=25))
def test_batch_invariants_under_random_ops(capacity, ops):
    batch = CandidateBatch(capacity)
    pool = make_samples(10)
    for n, (op, idx) in enumerate(ops):
        x = pool[n % 10]
        try:
            if op == "insert":
                batch.insert(x, np.full(3, float(n)))
            else:
                batch.swap(idx, x, np.full(3, float(n)))
        except BatchCapacityError:
            pass
        assert len(batch) <= capacity
        assert len(batch.features) == len(batch.samples)
