import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offgrid_sfft.rangetree import RangeTree


def brute(pts, alive, lo, hi):
    inside = np.all((pts >= lo) & (pts <= hi), axis=1) & alive
    return np.flatnonzero(inside).tolist()


def test_small_examples():
    tree = RangeTree([[0.0, 0.0], [1.0, 2.0], [1.0, 1.0]])
    assert tree.count([0, 0], [1, 2]) == 3
    assert tree.report([1, 1], [1, 1]) == [2]
    assert tree.report([0.5, 0.0], [2.0, 1.5]) == [2]
    assert tree.count([5, 5], [6, 6]) == 0
    tree.delete([2])
    assert tree.report([0, 0], [1, 2]) == [0, 1]
    assert len(tree) == 2


def test_closed_boundaries_and_one_dimension():
    tree = RangeTree([0.0, 1.0, 2.0, 3.0])
    assert tree.report(1.0, 2.0) == [1, 2]
    assert tree.count(-1, -0.5) == 0


def test_empty_tree_and_bad_inputs():
    tree = RangeTree(np.zeros((0, 3)))
    assert tree.count([0, 0, 0], [1, 1, 1]) == 0
    assert tree.report([0, 0, 0], [1, 1, 1]) == []
    with pytest.raises(ValueError):
        RangeTree([[0.0, np.nan]])
    with pytest.raises(ValueError):
        RangeTree([[0.0], [1.0]], ids=[3, 3])
    with pytest.raises(ValueError):
        RangeTree([[0.0, 0.0]]).count([1, 0], [0, 1])


def test_unknown_and_repeated_deletes_raise():
    tree = RangeTree([[0.0], [1.0]], ids=[10, 20])
    with pytest.raises(KeyError):
        tree.delete([30])
    tree.delete([10])
    with pytest.raises(KeyError):
        tree.delete([10])
    # A failed call leaves the tree untouched.
    with pytest.raises(KeyError):
        tree.delete([20, 99])
    assert tree.report([0], [1]) == [20]


def test_duplicate_ids_in_one_call_delete_once():
    tree = RangeTree([[0.0], [1.0], [2.0]])
    tree.delete([0, 0])
    assert tree.count([0], [2]) == 2


def test_custom_ids_reported_in_ascending_order():
    tree = RangeTree([[0.0], [1.0], [2.0]], ids=[7, 3, 5])
    assert tree.report([0], [2]) == [3, 5, 7]


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_agrees_with_brute_force(d):
    rng = np.random.default_rng(d)
    n = 400
    # A coarse grid forces many ties on every coordinate.
    pts = rng.integers(0, 6, size=(n, d)).astype(float)
    tree = RangeTree(pts)
    alive = np.ones(n, dtype=bool)
    for step in range(120):
        a, b = rng.integers(-1, 7, size=(2, d))
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        expected = brute(pts, alive, lo, hi)
        assert tree.report(lo, hi) == expected
        assert tree.count(lo, hi) == len(expected)
        if step % 3 == 0:
            victims = rng.choice(np.flatnonzero(alive), size=min(7, alive.sum()), replace=False)
            tree.delete(victims)
            alive[victims] = False
    assert len(tree) == alive.sum()


def test_insertion_order_does_not_matter():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(200, 3))
    perm = rng.permutation(200)
    a = RangeTree(pts)
    b = RangeTree(pts[perm], ids=perm)
    for lo, hi in itertools.islice(zip(rng.normal(size=(50, 3)) - 1, rng.normal(size=(50, 3)) + 1), 50):
        hi = np.maximum(lo, hi)
        assert a.report(lo, hi) == b.report(lo, hi)


def test_delete_everything():
    tree = RangeTree(np.random.default_rng(1).normal(size=(100, 2)))
    for i in range(100):
        tree.delete([i])
    assert len(tree) == 0
    assert tree.count([-10, -10], [10, 10]) == 0


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=1, max_size=80),
    st.tuples(st.integers(-6, 6), st.integers(-6, 6)),
    st.tuples(st.integers(0, 8), st.integers(0, 8)),
    st.data(),
)
def test_property_matches_brute_force(raw, corner, size, data):
    pts = np.array(raw, dtype=float)
    tree = RangeTree(pts)
    alive = np.ones(len(pts), dtype=bool)
    dead = data.draw(st.sets(st.integers(0, len(pts) - 1), max_size=len(pts)))
    if dead:
        tree.delete(sorted(dead))
        alive[list(dead)] = False
    lo = np.array(corner, dtype=float)
    hi = lo + np.array(size)
    assert tree.report(lo, hi) == brute(pts, alive, lo, hi)
    assert tree.count(lo, hi) == len(tree.report(lo, hi))
