import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from svdkifmm.geometry import cube_points, sphere_points
from svdkifmm.octree import (MAX_DEPTH, OverfullLeafError, build_tree, compute_interaction_lists,
                             compute_near_field, offset_id, offset_table)


def full_tree(points, s_max=100):
    tree = build_tree(points, s_max)
    compute_near_field(tree)
    compute_interaction_lists(tree)
    return tree


def test_offset_table():
    table = offset_table()
    assert len(table) == 316
    assert tuple(table[0]) == (-3, -3, -3)
    as_set = {tuple(o) for o in table}
    assert (0, 0, 0) not in as_set and (1, 1, 0) not in as_set
    assert [tuple(o) for o in table] == sorted(as_set)
    assert all(offset_id(o) == k for k, o in enumerate(table))
    assert offset_id((1, 0, -1)) == -1 and offset_id((4, 0, 0)) == -1


def test_single_point_minimum_depth():
    tree = build_tree([[0.2, 0.3, 0.4]], s_max=1)
    assert tree.depth == 2
    assert len(tree.leaves) == 1
    assert tree.leaf_sizes().tolist() == [1]


def test_octant_centers():
    pts = np.array([[x, y, z] for x in (0.25, 0.75) for y in (0.25, 0.75) for z in (0.25, 0.75)])
    tree = build_tree(pts, s_max=1)
    assert tree.depth == 2
    assert len(tree.leaves) == 8
    parents = tree.leaves.parent
    assert len(set(parents.tolist())) == 8


def test_sphere_leaf_bound():
    tree = build_tree(sphere_points(10_000, seed=3), s_max=100)
    assert tree.leaf_sizes().max() <= 100
    assert tree.leaf_sizes().sum() == 10_000


def test_overfull_leaf():
    with pytest.raises(OverfullLeafError, match="s_max=1"):
        build_tree(np.zeros((3, 3)), s_max=1)
    with pytest.raises(ValueError):
        build_tree(np.zeros((0, 3)))


def test_half_open_assignment():
    # a point on the shared face x = 0.5 goes to the upper cube
    pts = np.array([[0.0, 0, 0], [1.0, 1, 1], [0.5, 0.1, 0.1]])
    tree = build_tree(pts, s_max=3, pad=0.0)
    leaf = tree.leaf_of_point()[2]
    assert tree.leaves.coords[leaf][0] == 2
    # the global upper boundary stays inside the grid
    assert tree.leaves.coords[tree.leaf_of_point()[1]].tolist() == [3, 3, 3]


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (60, 3), elements=st.floats(-5, 5, allow_nan=False)),
       st.integers(1, 20))
def test_partition(points, s_max):
    if len(np.unique(points, axis=0)) < len(points):
        return
    tree = build_tree(points, s_max)
    assert tree.leaf_sizes().sum() == len(points)
    assert tree.leaf_sizes().max() <= s_max
    assert np.array_equal(np.sort(tree.order), np.arange(len(points)))
    assert np.array_equal(tree.points, points[tree.order])
    # every point inside its leaf
    lo = tree.root_center - tree.root_halfwidth
    h = tree.halfwidth(tree.depth)
    leaf = tree.leaf_of_point()
    cmin = lo + 2 * h * tree.leaves.coords[leaf]
    assert np.all(points >= cmin - 1e-12) and np.all(points <= cmin + 2 * h + 1e-12)


def test_near_lists():
    tree = full_tree(cube_points(4000, seed=1), s_max=20)
    L = tree.depth
    n = 1 << L
    assert len(tree.cube(L, (0, 0, 0)).near_list) == 8
    assert len(tree.cube(L, (1, 2, 3)).near_list) == 27
    assert len(tree.cube(1, (0, 1, 0)).near_list) == 8
    assert len(tree.cube(L, (n - 1, 0, 3)).near_list) == 12
    ptr, idx = tree.near[L]
    assert np.all(np.diff(ptr) <= 27)


def test_interaction_lists():
    tree = full_tree(cube_points(4000, seed=1), s_max=20)
    L = tree.depth
    assert len(tree.cube(L, (4, 4, 4)).interaction_list) == 189
    assert tree.cube(1, (0, 0, 0)).interaction_list == []
    assert tree.cube(0, (0, 0, 0)).interaction_list == []
    assert len(tree.interactions[1]) == 0
    inter = tree.interactions[L]
    assert len(np.unique(inter.offset_id)) == 316
    table = offset_table()
    coords = tree.leaves.coords
    pairs = {}
    for oid in range(316):
        tg, sc = inter.pairs(oid)
        assert np.array_equal(coords[tg] - coords[sc], np.broadcast_to(table[oid], (len(tg), 3)))
        for a, b in zip(tg.tolist(), sc.tolist()):
            pairs[(a, b)] = oid
    # symmetry: (C, D) present iff (D, C) present, with negated offsets
    for (a, b), oid in pairs.items():
        back = pairs[(b, a)]
        assert np.array_equal(table[back], -table[oid])
    # the cube view agrees with the CSR lists
    k = int(tree.leaves.find([[4, 4, 4]])[0])
    mine = sorted((int(tree.leaves.find([src])[0]), oid)
                  for src, oid in tree.cube(L, (4, 4, 4)).interaction_list)
    assert mine == sorted((b, o) for (a, b), o in pairs.items() if a == k)


def test_depth_cap_constant():
    assert MAX_DEPTH == 16
