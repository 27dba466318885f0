import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from allocation_heuristic import (allocate_channels, allocate_from_config, best_partition, canonical,
                                  dispersed_partition, enumerate_partitions, evaluate_partition, partition_count,
                                  partition_nu, polygon_perimeter, size_profile)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@pytest.mark.parametrize("U,W,sizes", [(8, 3, (3, 3, 2)), (22, 3, (8, 7, 7)), (6, 3, (2, 2, 2)), (5, 1, (5,))])
def test_size_profile(U, W, sizes):
    assert size_profile(U, W) == sizes


def test_perimeters():
    assert polygon_perimeter([[0.0, 0.0]]) == 0.0
    assert polygon_perimeter([[0.0, 0.0], [3.0, 4.0]]) == pytest.approx(10.0)
    tri = [[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]]
    assert polygon_perimeter(tri) == pytest.approx(3.0)
    assert polygon_perimeter(SQUARE[[2, 0, 3, 1]]) == pytest.approx(4.0)


def test_nu_prefers_equal_large_groups():
    assert partition_nu([4.0, 4.0]) > partition_nu([3.0, 5.0])
    assert partition_nu([2.0, 2.0]) < partition_nu([4.0, 4.0])


def test_enough_channels_gives_singletons():
    pts = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    best = best_partition(pts, W=3)
    assert best.groups == ((0,), (1,), (2,))
    assert best.channel_matrix(3, 3).tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 1]]


def test_square_pairs_opposite_corners():
    best = best_partition(SQUARE, W=2)
    assert canonical(best.groups) == ((0, 2), (1, 3))
    assert best.perimeters == pytest.approx((2 * math.sqrt(2), 2 * math.sqrt(2)))


@pytest.mark.parametrize("sizes", [(2, 2), (2, 2, 2), (3, 2), (3, 3, 2), (2, 1, 1), (4,)])
def test_partition_count_matches_enumeration(sizes):
    found = [canonical(p) for p in enumerate_partitions(range(sum(sizes)), sizes)]
    assert len(found) == len(set(found)) == partition_count(sizes)
    assert all(sorted(len(g) for g in p) == sorted(sizes) for p in found)


def test_enumerated_best_matches_brute_force():
    pts = np.random.default_rng(1).uniform(-100, 100, size=(6, 2))
    best = best_partition(pts, W=3)
    brute = -math.inf
    for labels in itertools.product(range(3), repeat=6):
        groups = [tuple(i for i in range(6) if labels[i] == w) for w in range(3)]
        if sorted(len(g) for g in groups) == [2, 2, 2]:
            brute = max(brute, evaluate_partition(pts, groups).nu)
    assert best.nu == pytest.approx(brute)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_relabelling_users_keeps_nu(point_seed, perm_seed):
    pts = np.random.default_rng(point_seed).uniform(-100, 100, size=(7, 2))
    perm = np.random.default_rng(perm_seed).permutation(7)
    assert best_partition(pts[perm], W=3).nu == pytest.approx(best_partition(pts, W=3).nu, rel=1e-9)


def test_sampled_search_is_seeded():
    pts = np.random.default_rng(2).uniform(-100, 100, size=(12, 2))
    a = best_partition(pts, W=3, max_enumeration=0, samples=200, seed=5)
    b = best_partition(pts, W=3, max_enumeration=0, samples=200, seed=5)
    assert a.groups == b.groups
    assert sorted(a.sizes) == [4, 4, 4]
    dispersed = evaluate_partition(pts, dispersed_partition(pts, (4, 4, 4)))
    assert a.nu >= dispersed.nu


def test_dispersed_partition_sizes():
    pts = np.random.default_rng(0).uniform(-1, 1, size=(8, 2))
    groups = dispersed_partition(pts, size_profile(8, 3))
    assert sorted(len(g) for g in groups) == [2, 3, 3]
    assert sorted(i for g in groups for i in g) == list(range(8))


def test_rejects_empty_inputs():
    with pytest.raises(ValueError):
        best_partition(SQUARE, W=0)
    with pytest.raises(ValueError):
        best_partition(np.empty((0, 2)), W=2)


def test_allocation_for_instance(tiny_context, tiny_cfg):
    r = allocate_channels(tiny_context.instance)
    assert r.shape == (4, 2)
    assert r.sum(axis=1).tolist() == [1, 1, 1, 1]
    assert r.sum(axis=0).tolist() == [2, 2]
    assert np.array_equal(allocate_from_config(tiny_context.instance, tiny_cfg), r)
