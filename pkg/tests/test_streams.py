import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatdiff.streams import batches, log_n, pmap, stream, tree_sum, tree_sum_arrays


def test_stream_reproducible_and_keyed():
    a = stream(3, "x", 1).random(5)
    assert np.array_equal(a, stream(3, "x", 1).random(5))
    assert not np.array_equal(a, stream(3, "x", 2).random(5))
    assert not np.array_equal(a, stream(4, "x", 1).random(5))
    assert isinstance(stream(0).bit_generator, np.random.Philox)


@given(st.integers(0, 10 ** 5), st.integers(1, 5000))
def test_batches_cover_range(count, size):
    parts = batches(count, size)
    assert sum(ln for _, ln in parts) == count
    assert [i for i, _ in parts] == list(range(len(parts)))
    assert all(ln == size for _, ln in parts[:-1])


def test_pmap_preserves_order():
    items = list(range(50))
    assert pmap(lambda x: x * x, items, threads=4) == [x * x for x in items]
    assert pmap(lambda x: x, [], threads=4) == []


@given(st.lists(st.floats(-1e6, 1e6), max_size=40))
def test_tree_sum_fixed_order(vals):
    assert tree_sum(vals) == tree_sum(list(vals))
    assert tree_sum(vals) == pytest.approx(sum(vals), abs=1e-6 * (1 + sum(abs(v) for v in vals)))


def test_tree_sum_arrays():
    arrs = [np.full(3, float(i)) for i in range(7)]
    assert np.array_equal(tree_sum_arrays(arrs), np.full(3, 21.0))
    assert tree_sum([]) == 0.0


def test_log_n_convention():
    assert log_n(1) == 1.0
    assert log_n(8) == pytest.approx(np.log(8))
