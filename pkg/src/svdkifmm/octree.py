"""
Uniform-depth octree with near fields and M2L interaction lists.

Only nonempty cubes are stored per level (as sorted integer index triples);
empty cubes stay valid geometric neighbours, which is what the
:meth:`Octree.cube` view reports. Points are reordered so that every leaf
owns a contiguous slice ``[leaf_start, leaf_end)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

MAX_DEPTH = 16
MIN_DEPTH = 2
DEFAULT_PAD = 1e-6


class OverfullLeafError(RuntimeError):
    pass


@lru_cache(maxsize=None)
def _offsets() -> tuple[tuple[int, int, int], ...]:
    return tuple(o for o in itertools.product(range(-3, 4), repeat=3)
                 if max(abs(c) for c in o) > 1)


def offset_table() -> np.ndarray:
    """The 316 far offsets in ``[-3, 3]^3 \\ [-1, 1]^3``, lexicographic order."""
    return np.array(_offsets(), dtype=np.int64)


@lru_cache(maxsize=None)
def _offset_lookup() -> np.ndarray:
    lut = np.full((7, 7, 7), -1, dtype=np.int64)
    for k, (a, b, c) in enumerate(_offsets()):
        lut[a + 3, b + 3, c + 3] = k
    return lut


def offset_id(delta) -> int:
    """Index of an integer offset in :func:`offset_table`; -1 if near or out of range."""
    a, b, c = (int(v) for v in delta)
    if max(abs(a), abs(b), abs(c)) > 3:
        return -1
    return int(_offset_lookup()[a + 3, b + 3, c + 3])


NEAR_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)
OCTANTS = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)


def _keys(coords: np.ndarray, level: int) -> np.ndarray:
    n = np.int64(1) << level
    return (coords[:, 0] * n + coords[:, 1]) * n + coords[:, 2]


@dataclass
class Level:
    """Nonempty cubes of one tree level, sorted by linear key."""

    level: int
    coords: np.ndarray  # (n, 3) int64
    keys: np.ndarray  # (n,) int64, sorted
    parent: np.ndarray  # (n,) index into the previous level, -1 at the root
    octant: np.ndarray  # (n,) child octant within the parent, 0..7

    def __len__(self):
        return len(self.keys)

    def find(self, coords: np.ndarray) -> np.ndarray:
        """Indices of cubes with the given index triples; -1 where absent."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        n = 1 << self.level
        inside = ((coords >= 0) & (coords < n)).all(axis=1)
        keys = _keys(np.where(inside[:, None], coords, 0), self.level)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        hit = inside & (self.keys[pos] == keys)
        return np.where(hit, pos, -1)


@dataclass
class InteractionList:
    """M2L pairs of one level, grouped by offset id (ascending).

    The offset of a pair is ``target - source`` in index units, matching the
    geometry of :func:`svdkifmm.translation.build_m2l`.
    """

    target: np.ndarray
    source: np.ndarray
    offset_id: np.ndarray
    offset_ptr: np.ndarray  # (317,) slice bounds per offset id

    def pairs(self, oid: int):
        a, b = self.offset_ptr[oid], self.offset_ptr[oid + 1]
        return self.target[a:b], self.source[a:b]

    def __len__(self):
        return len(self.target)


@dataclass
class Cube:
    """Geometric view of one cube (empty or not)."""

    level: int
    index: tuple[int, int, int]
    center: np.ndarray
    halfwidth: float
    parent: Optional[tuple[int, int, int]]
    children: list[tuple[int, int, int]]
    member_ids: np.ndarray
    near_list: list[tuple[int, int, int]]
    # (source cube, offset id of this cube minus the source cube)
    interaction_list: list[tuple[tuple[int, int, int], int]]


@dataclass
class Octree:
    root_center: np.ndarray
    root_halfwidth: float
    depth: int
    points: np.ndarray  # sorted by leaf
    order: np.ndarray  # sorted position -> original index
    levels: list[Level]
    leaf_start: np.ndarray
    leaf_end: np.ndarray
    near: dict = field(default_factory=dict)  # level -> (ptr, idx) CSR
    interactions: dict = field(default_factory=dict)  # level -> InteractionList

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def leaves(self) -> Level:
        return self.levels[self.depth]

    def halfwidth(self, level: int) -> float:
        return self.root_halfwidth / 2.0**level

    def centers(self, level: int) -> np.ndarray:
        h = self.halfwidth(level)
        lo = self.root_center - self.root_halfwidth
        return lo + (2.0 * self.levels[level].coords + 1.0) * h

    def nonempty_counts(self) -> list[int]:
        return [len(lv) for lv in self.levels]

    def leaf_sizes(self) -> np.ndarray:
        return self.leaf_end - self.leaf_start

    def leaf_of_point(self) -> np.ndarray:
        """Leaf index of every point, in original input order."""
        leaf = np.repeat(np.arange(len(self.leaf_start)), self.leaf_sizes())
        out = np.empty_like(leaf)
        out[self.order] = leaf
        return out

    def cube(self, level: int, index) -> Cube:
        index = tuple(int(v) for v in index)
        n = 1 << level
        if not all(0 <= v < n for v in index):
            raise IndexError(f"cube {index} outside the level-{level} grid")
        h = self.halfwidth(level)
        center = self.root_center - self.root_halfwidth + (2.0 * np.array(index) + 1.0) * h
        ijk = np.array(index)
        parent = tuple(int(v) for v in ijk // 2) if level > 0 else None
        children = ([tuple(int(v) for v in 2 * ijk + o) for o in OCTANTS]
                    if level < self.depth else [])
        members = np.empty(0, dtype=np.int64)
        if level == self.depth:
            k = self.leaves.find(ijk)[0]
            if k >= 0:
                members = np.sort(self.order[self.leaf_start[k]:self.leaf_end[k]])
        near = [tuple(int(v) for v in ijk + o) for o in NEAR_OFFSETS
                if all(0 <= c < n for c in ijk + o)]
        inter = []
        if level >= 2:
            pij = ijk // 2
            for oid, o in enumerate(offset_table()):
                nb = ijk - o
                if all(0 <= c < n for c in nb) and np.abs(nb // 2 - pij).max() <= 1:
                    inter.append((tuple(int(v) for v in nb), oid))
        return Cube(level, index, center, h, parent, children, members, near, inter)


def _initial_depth(n: int, s_max: int) -> int:
    ratio = n / s_max
    if ratio <= 1.0:
        return MIN_DEPTH
    return max(MIN_DEPTH, math.ceil(math.log(ratio, 8) - 1e-12))


def build_tree(points, s_max: int = 100, pad: float = DEFAULT_PAD,
               min_depth: int = MIN_DEPTH) -> Octree:
    """Build a uniform-depth octree.

    The depth starts at ``max(2, ceil(log8(N / s_max)))`` and grows until
    no leaf holds more than ``s_max`` points.

    Raises
    ------
    OverfullLeafError
        If a leaf still exceeds ``s_max`` at depth :data:`MAX_DEPTH`.
    """
    pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot build a tree over zero points")
    if s_max < 1:
        raise ValueError("s_max must be >= 1")
    if pad < 0:
        raise ValueError("pad must be >= 0")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    hw = 0.5 * float((hi - lo).max())
    if hw == 0.0:
        hw = 0.5 * max(1.0, float(np.abs(center).max()))
    hw *= 1.0 + pad
    corner = center - hw

    depth = max(min_depth, _initial_depth(len(pts), s_max))
    while True:
        n = 1 << depth
        coords = np.floor((pts - corner) / (2.0 * hw) * n).astype(np.int64)
        np.clip(coords, 0, n - 1, out=coords)
        keys = _keys(coords, depth)
        order = np.argsort(keys, kind="stable")
        uniq, start, counts = np.unique(keys[order], return_index=True, return_counts=True)
        if counts.max() <= s_max:
            break
        if depth >= MAX_DEPTH:
            worst = int(np.argmax(counts))
            raise OverfullLeafError(
                f"leaf with {counts[worst]} points exceeds s_max={s_max} at depth cap "
                f"{MAX_DEPTH}; points are too clustered or duplicated")
        depth += 1

    leaf_coords = coords[order][start]
    levels: list[Level] = [None] * (depth + 1)
    cur = leaf_coords
    for lev in range(depth, -1, -1):
        keys_l = _keys(cur, lev)
        levels[lev] = Level(lev, cur, keys_l, np.full(len(cur), -1, np.int64),
                            ((cur[:, 0] & 1) << 2 | (cur[:, 1] & 1) << 1 | (cur[:, 2] & 1)))
        if lev > 0:
            pc = np.unique(cur // 2, axis=0)
            # np.unique on rows sorts lexicographically == key order
            cur = pc
    for lev in range(1, depth + 1):
        levels[lev].parent = levels[lev - 1].find(levels[lev].coords // 2)
    levels[0].octant[:] = 0

    tree = Octree(root_center=center, root_halfwidth=hw, depth=depth,
                  points=pts[order], order=order, levels=levels,
                  leaf_start=start.astype(np.int64),
                  leaf_end=(start + counts).astype(np.int64))
    return tree


def compute_near_field(tree: Octree) -> None:
    """Populate ``tree.near[level] = (ptr, idx)``: nonempty same-level cubes
    (self included) whose index triples differ by at most one."""
    for lev, level in enumerate(tree.levels):
        nb = level.find((level.coords[:, None, :] + NEAR_OFFSETS[None]).reshape(-1, 3))
        nb = nb.reshape(len(level), 27)
        counts = (nb >= 0).sum(axis=1)
        ptr = np.zeros(len(level) + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        idx = nb[nb >= 0]  # row-major keeps rows contiguous, sorted by key
        tree.near[lev] = (ptr, idx)


def compute_interaction_lists(tree: Octree) -> None:
    """Populate ``tree.interactions[level]`` for every level >= 2."""
    offs = offset_table()
    for lev in range(2, tree.depth + 1):
        level = tree.levels[lev]
        pc = level.coords // 2
        tg, sc, oi = [], [], []
        for k, o in enumerate(offs):
            nbc = level.coords - o
            adj = (np.abs(nbc // 2 - pc) <= 1).all(axis=1)
            src = level.find(nbc)
            ok = adj & (src >= 0)
            t = np.nonzero(ok)[0]
            tg.append(t)
            sc.append(src[ok])
            oi.append(np.full(len(t), k, dtype=np.int64))
        counts = np.array([len(t) for t in tg])
        ptr = np.zeros(len(offs) + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        tree.interactions[lev] = InteractionList(
            np.concatenate(tg).astype(np.int64), np.concatenate(sc).astype(np.int64),
            np.concatenate(oi), ptr)
    for lev in range(0, min(2, tree.depth + 1)):
        empty = np.empty(0, dtype=np.int64)
        tree.interactions[lev] = InteractionList(empty, empty, empty,
                                                 np.zeros(len(offs) + 1, dtype=np.int64))
