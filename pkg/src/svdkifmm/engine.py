"""
FMM matrix-vector product: setup, upward pass, downward pass and near field.

A plan owns the octree, the (compressed) operators and any precomputed
blocks; :meth:`FmmPlan.apply` is read-only, so one plan can serve many
products and many threads. Points are handled in leaf-sorted order
internally and returned in input order.

Particle mode evaluates point sources on the fly with the compiled kernels.
BEM mode treats every element as a source distributed over its triangle:
S2M check potentials and near-field interactions are element integrals,
precomputed once into sparse matrices.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import _accel
from .bem.mesh import TriMesh
from .bem.quadrature import DEFAULT_QUADRATURE, DOUBLE, SINGLE, ElementQuadrature, integrate_pairs
from .compression import OperatorSet, build_operator_set, epsilon1
from .kernel import (COINCIDENCE_RTOL, CoincidentPointsError, KernelSpec, Layer, get_kernel,
                     translation_kernel)
from .octree import Octree, build_tree, compute_interaction_lists, compute_near_field
from .surfaces import D_MAX, ConfigError, SurfaceRole, SurfaceSpec, bem_offset, unit_surface


@dataclass(frozen=True)
class FmmConfig:
    """Tunables of the FMM.

    Attributes
    ----------
    p : points per cube edge on the equivalent/check surfaces
    s_max : maximum number of points (or element centroids) per leaf
    C1, C2 : stage-one and stage-two compression coefficients
    C_d : BEM surface offset coefficient, ``d = C_d / sqrt(s_max)``
    d_particle : surface offset used for point sources
    pinv_cutoff : relative singular-value cutoff of the equivalent-density solves
    near_cache : precompute particle near-field blocks instead of evaluating on the fly
    m2l : ``"svd"`` (compressed) or ``"dense"`` (uncompressed baseline)
    pad : relative root-cube padding
    eps1 : explicit stage-one threshold overriding the ``C1`` rule
    bem_expand_offset : in BEM mode, grow ``d`` until every element fits inside
        its leaf's upward-equivalent surface instead of failing
    """

    p: int = 6
    s_max: int = 100
    C1: float = 0.1
    C2: float = 10.0
    C_d: float = 0.5
    d_particle: float = 0.1
    pinv_cutoff: float = 1e-12
    near_cache: bool = False
    m2l: str = "svd"
    pad: float = 1e-6
    eps1: Optional[float] = None
    bem_expand_offset: bool = True
    quadrature: ElementQuadrature = DEFAULT_QUADRATURE

    def __post_init__(self):
        if int(self.p) < 2:
            raise ConfigError(f"p must be >= 2, got {self.p}")
        if int(self.s_max) < 1:
            raise ConfigError(f"s_max must be >= 1, got {self.s_max}")
        if not self.C1 > 0:
            raise ConfigError(f"C1 must be positive, got {self.C1}")
        if not self.C2 >= 0:
            raise ConfigError(f"C2 must be >= 0, got {self.C2}")
        if not self.C_d > 0:
            raise ConfigError(f"C_d must be positive, got {self.C_d}")
        if not 0 <= self.d_particle < D_MAX:
            raise ConfigError(f"d_particle must lie in [0, 2/3), got {self.d_particle}")
        if not 0 < self.pinv_cutoff <= 1:
            raise ConfigError(f"pinv_cutoff must lie in (0, 1], got {self.pinv_cutoff}")
        if self.m2l not in ("svd", "dense"):
            raise ConfigError(f"m2l must be 'svd' or 'dense', got {self.m2l!r}")
        if self.eps1 is not None and not 0 < self.eps1 < 1:
            raise ConfigError(f"eps1 must lie in (0, 1), got {self.eps1}")

    def epsilon1(self, depth: int) -> float:
        return self.eps1 if self.eps1 is not None else epsilon1(self.C1, depth)


@dataclass(eq=False)
class FmmPlan:
    tree: Octree
    operators: OperatorSet
    mode: str  # "particle" or "bem"
    kernel: KernelSpec  # source kernel
    config: FmmConfig
    spec: SurfaceSpec
    normals: Optional[np.ndarray] = None  # leaf-sorted source normals
    near_matrix: Optional[sp.csr_matrix] = None
    s2m_matrix: Optional[sp.csr_matrix] = None
    mesh: Optional[TriMesh] = None
    backend: str = field(default_factory=lambda: _accel.BACKEND)

    def __post_init__(self):
        t = self.tree
        hw = t.halfwidth(t.depth)
        unit = unit_surface(self.spec.p)
        self._leaf_centers = np.ascontiguousarray(t.centers(t.depth))
        self._uc = np.ascontiguousarray(self.spec.factor(SurfaceRole.UPWARD_CHECK) * hw * unit)
        self._de = np.ascontiguousarray(
            self.spec.factor(SurfaceRole.DOWNWARD_EQUIVALENT) * hw * unit)
        if self.normals is None:
            self.normals = np.zeros((t.n_points, 3))
        self._near_ptr, self._near_idx = t.near[t.depth]

    # -- basic properties ------------------------------------------------------
    @property
    def n(self) -> int:
        return self.tree.n_points

    @property
    def depth(self) -> int:
        return self.tree.depth

    @property
    def epsilon1(self) -> float:
        return self.operators.epsilon1

    @property
    def compressed_dims(self) -> tuple[int, int]:
        ops = self.operators.ops(self.depth)
        return ops.up_dim, ops.down_dim

    def _accel(self):
        return _accel.get_backend(self.backend)

    def _sorted(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise ValueError(f"density vector has shape {q.shape}, expected ({self.n},)")
        return np.ascontiguousarray(q[self.tree.order])

    def _unsorted(self, p_sorted) -> np.ndarray:
        out = np.empty_like(p_sorted)
        out[self.tree.order] = p_sorted
        return out

    # -- passes (leaf-sorted internals) -------------------------------------------
    def _upward(self, qs):
        t, ops_set = self.tree, self.operators
        L = t.depth
        leaf_ops = ops_set.ops(L)
        if self.s2m_matrix is not None:
            up = (self.s2m_matrix @ qs).reshape(len(t.leaves), leaf_ops.up_dim)
        else:
            check = self._accel().sources_to_surface(
                self.kernel.accel_id, t.points, self.normals, qs, t.leaf_start, t.leaf_end,
                self._leaf_centers, self._uc)
            up = (check @ leaf_ops.s2m.T) * ops_set.scales(L)[1]
        state = {L: up}
        for lev in range(L - 1, 1, -1):
            child = t.levels[lev + 1]
            m2m = ops_set.ops(lev).m2m
            cur = np.zeros((len(t.levels[lev]), m2m.shape[1]))
            for o in range(8):
                sel = np.nonzero(child.octant == o)[0]
                if len(sel):
                    # parents are unique within one octant
                    cur[child.parent[sel]] += state[lev + 1][sel] @ m2m[o].T
            state[lev] = cur
        return state

    def _downward(self, up, timings=None):
        t, ops_set = self.tree, self.operators
        L = t.depth
        local = {}
        t_m2l = 0.0
        for lev in range(2, L + 1):
            ops = ops_set.ops(lev)
            cur = np.zeros((len(t.levels[lev]), ops.down_dim))
            if lev > 2:
                level = t.levels[lev]
                l2l = ops_set.ops(lev - 1).l2l
                for o in range(8):
                    sel = np.nonzero(level.octant == o)[0]
                    if len(sel):
                        cur[sel] += local[lev - 1][level.parent[sel]] @ l2l[o].T
            t0 = time.perf_counter()
            inter = t.interactions[lev]
            if len(inter):
                acc = np.zeros_like(cur)
                src = up[lev]
                for oid in range(len(inter.offset_ptr) - 1):
                    tg, sc = inter.pairs(oid)
                    if len(tg):
                        acc[tg] += ops.m2l.apply_rows(oid, src[sc])
                cur += ops_set.scales(lev)[0] * acc
            t_m2l += time.perf_counter() - t0
            local[lev] = cur
        dens = (local[L] @ ops_set.ops(L).l2t.T) * ops_set.scales(L)[1]
        far = self._accel().surface_to_targets(t.points, t.leaf_start, t.leaf_end,
                                              self._leaf_centers, self._de,
                                              np.ascontiguousarray(dens))
        if timings is not None:
            timings["m2l"] = t_m2l
        return far

    def _near(self, qs):
        if self.near_matrix is not None:
            return self.near_matrix @ qs
        t = self.tree
        tol = COINCIDENCE_RTOL * 2.0 * np.sqrt(3.0) * t.root_halfwidth
        out, bad, bad_src = self._accel().near_field(
            self.kernel.accel_id, t.points, self.normals, qs, t.leaf_start, t.leaf_end,
            self._near_ptr, self._near_idx, True, tol)
        if (bad >= 0).any():
            b = int(np.nonzero(bad >= 0)[0][0])
            i, j = int(t.order[bad[b]]), int(t.order[bad_src[b]])
            raise CoincidentPointsError(f"points {i} and {j} coincide", pair=(i, j))
        return out

    # -- public API ---------------------------------------------------------------
    def upward_pass(self, q) -> dict:
        """Compressed upward equivalent densities per level (levels >= 2)."""
        return self._upward(self._sorted(q))

    def downward_pass(self, up_state: dict) -> np.ndarray:
        """Far-field potentials (input order) from an upward state."""
        return self._unsorted(self._downward(up_state))

    def near_pass(self, q) -> np.ndarray:
        """Near-field potentials (input order)."""
        return self._unsorted(self._near(self._sorted(q)))

    def apply(self, q) -> np.ndarray:
        qs = self._sorted(q)
        far = self._downward(self._upward(qs))
        return self._unsorted(self._near(qs) + far)

    __call__ = apply

    def apply_timed(self, q):
        """``apply`` plus wall times of the phases (seconds)."""
        timings = {}
        t0 = time.perf_counter()
        qs = self._sorted(q)
        up = self._upward(qs)
        t1 = time.perf_counter()
        far = self._downward(up, timings)
        t2 = time.perf_counter()
        near = self._near(qs)
        t3 = time.perf_counter()
        out = self._unsorted(near + far)
        timings.update(upward=t1 - t0, downward=t2 - t1 - timings["m2l"], near=t3 - t2,
                       total=time.perf_counter() - t0)
        return out, timings

    def memory_bytes(self) -> int:
        """Stored operators, precomputed blocks and per-product work arrays."""
        total = self.operators.nbytes()
        for m in (self.near_matrix, self.s2m_matrix):
            if m is not None:
                total += m.data.nbytes + m.indices.nbytes + m.indptr.nbytes
        t = self.tree
        total += t.points.nbytes + t.order.nbytes + self.normals.nbytes
        for lev in range(2, t.depth + 1):
            ops = self.operators.ops(lev)
            total += len(t.levels[lev]) * (ops.up_dim + ops.down_dim) * 8
            total += t.interactions[lev].target.nbytes * 3
        ptr, idx = t.near[t.depth]
        return int(total + ptr.nbytes + idx.nbytes)

    def enclosure_margin(self) -> float:
        """Smallest gap (relative to the leaf halfwidth) between an element
        vertex and its leaf's upward-equivalent surface; negative if some
        vertex lies outside. Particle mode returns ``d``."""
        if self.mesh is None:
            return self.spec.d
        return self.spec.d - _required_offset(self.tree, self.mesh)

    def with_kernel(self, kernel) -> "FmmPlan":
        """Plan for another source kernel reusing this tree and these operators."""
        kernel = get_kernel(kernel)
        if translation_kernel(kernel) != self.operators.kernel:
            raise ValueError("kernels differ on the surfaces; operators cannot be shared")
        if self.mode == "bem":
            return _bem_plan_from(self.tree, self.mesh, self.operators, kernel, self.config,
                                  self.spec, self.backend)
        return replace(self, kernel=kernel)


# ---------------------------------------------------------------------------
# construction

def _operators(tree: Octree, spec: SurfaceSpec, kernel: KernelSpec, config: FmmConfig):
    return build_operator_set(spec, translation_kernel(kernel), config.epsilon1(tree.depth),
                              config.C2, config.pinv_cutoff, config.m2l,
                              r0=tree.root_halfwidth, depth=tree.depth)


def _tree(points, config: FmmConfig) -> Octree:
    tree = build_tree(points, config.s_max, config.pad)
    compute_near_field(tree)
    compute_interaction_lists(tree)
    return tree


def _near_pairs(tree: Octree):
    """(target, source) leaf-sorted index pairs of the leaf-level near field."""
    ptr, idx = tree.near[tree.depth]
    starts, ends = tree.leaf_start, tree.leaf_end
    tg, sc = [], []
    for b in range(len(starts)):
        src = np.concatenate([np.arange(starts[s], ends[s]) for s in idx[ptr[b]:ptr[b + 1]]])
        tgt = np.arange(starts[b], ends[b])
        tg.append(np.repeat(tgt, len(src)))
        sc.append(np.tile(src, len(tgt)))
    return np.concatenate(tg), np.concatenate(sc)


def _particle_near_matrix(tree, kernel, normals):
    tg, sc = _near_pairs(tree)
    keep = tg != sc
    tg, sc = tg[keep], sc[keep]
    diff = tree.points[tg] - tree.points[sc]
    r2 = np.einsum("pk,pk->p", diff, diff)
    tol = COINCIDENCE_RTOL * 2.0 * np.sqrt(3.0) * tree.root_halfwidth
    if (r2 <= tol * tol).any():
        k = int(np.argmax(r2 <= tol * tol))
        i, j = int(tree.order[tg[k]]), int(tree.order[sc[k]])
        raise CoincidentPointsError(f"points {i} and {j} coincide", pair=(i, j))
    if kernel.layer is Layer.SINGLE:
        vals = _accel.INV_4PI / np.sqrt(r2)
    else:
        vals = _accel.INV_4PI * np.einsum("pk,pk->p", diff, normals[sc]) / (r2 * np.sqrt(r2))
    n = tree.n_points
    return sp.csr_matrix((vals, (tg, sc)), shape=(n, n))


def plan_particles(points, config: FmmConfig | None = None, kernel="single",
                   normals=None) -> FmmPlan:
    """Plan for point sources that are also the targets (self term excluded)."""
    config = config or FmmConfig()
    kernel = get_kernel(kernel)
    points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
    tree = _tree(points, config)
    nrm = None
    if kernel.needs_normals:
        if normals is None:
            raise ValueError(f"kernel {kernel.name} requires source normals")
        nrm = np.ascontiguousarray(np.asarray(normals, float).reshape(-1, 3)[tree.order])
    spec = SurfaceSpec(config.p, config.d_particle)
    ops = _operators(tree, spec, kernel, config)
    near = _particle_near_matrix(tree, kernel, nrm) if config.near_cache else None
    return FmmPlan(tree, ops, "particle", kernel, config, spec, normals=nrm, near_matrix=near)


def _required_offset(tree: Octree, mesh: TriMesh) -> float:
    """Smallest ``d`` for which every element lies inside its leaf's
    ``(1 + d) r`` cube."""
    r = tree.halfwidth(tree.depth)
    leaf = np.repeat(np.arange(len(tree.leaf_start)), tree.leaf_sizes())
    centers = tree.centers(tree.depth)[leaf]
    verts = mesh.element_vertices[tree.order]
    reach = np.abs(verts - centers[:, None, :]).max(axis=(1, 2))
    return float(reach.max() / r - 1.0)


def _bem_blocks(tree, mesh, ops_set, kernel, config, spec):
    kind = SINGLE if kernel.layer is Layer.SINGLE else DOUBLE
    tris = mesh.element_vertices[tree.order]
    nrm = mesh.normals[tree.order]
    quad = config.quadrature
    n = tree.n_points
    L = tree.depth
    # S2M: element integrals at the upward check points, then the compressed solve
    leaf_ops = ops_set.ops(L)
    uc = spec.factor(SurfaceRole.UPWARD_CHECK) * tree.halfwidth(L) * unit_surface(spec.p)
    centers = tree.centers(L)
    ns = len(uc)
    leaf = np.repeat(np.arange(len(tree.leaf_start)), tree.leaf_sizes())
    x = (centers[leaf][:, None, :] + uc[None]).reshape(-1, 3)
    elem = np.repeat(np.arange(n), ns)
    check = integrate_pairs(x, elem, tris, nrm, kind, quad).reshape(n, ns)
    W = (check @ leaf_ops.s2m.T) * ops_set.scales(L)[1]  # (n, up_dim)
    up_dim = W.shape[1]
    rows = (leaf[:, None] * up_dim + np.arange(up_dim)[None, :]).ravel()
    cols = np.repeat(np.arange(n), up_dim)
    s2m = sp.csr_matrix((W.ravel(), (rows, cols)), shape=(len(tree.leaf_start) * up_dim, n))
    # near field: element integrals at the collocation points
    tg, sc = _near_pairs(tree)
    vals = integrate_pairs(tree.points[tg], sc, tris, nrm, kind, quad)
    near = sp.csr_matrix((vals, (tg, sc)), shape=(n, n))
    return s2m, near


def _bem_plan_from(tree, mesh, ops_set, kernel, config, spec, backend=None) -> FmmPlan:
    s2m, near = _bem_blocks(tree, mesh, ops_set, kernel, config, spec)
    nrm = np.ascontiguousarray(mesh.normals[tree.order])
    plan = FmmPlan(tree, ops_set, "bem", kernel, config, spec, normals=nrm,
                   near_matrix=near, s2m_matrix=s2m, mesh=mesh)
    if backend is not None:
        plan.backend = backend
    return plan


def bem_surface_offset(tree: Octree, mesh: TriMesh, config: FmmConfig) -> float:
    """Offset ``d`` for a BEM plan.

    Starts from ``C_d / sqrt(s_max)``; if some element still reaches past its
    leaf's upward-equivalent surface, ``d`` grows to the measured requirement
    plus a 1% margin (or a :class:`ConfigError` is raised when
    ``config.bem_expand_offset`` is false or ``d`` would reach 2/3).
    """
    d = bem_offset(config.s_max, config.C_d)
    need = _required_offset(tree, mesh)
    if need < d:
        return d
    if not config.bem_expand_offset:
        raise ConfigError(f"elements reach {need:.3g} leaf halfwidths beyond their leaf but "
                          f"d = {d:.3g}; increase C_d or s_max")
    d = need + 0.01
    if d >= D_MAX:
        raise ConfigError(f"elements protrude too far from their leaves (needs d = {d:.3g} "
                          ">= 2/3); refine the mesh or increase s_max")
    return d


def plan_bem(mesh: TriMesh, config: FmmConfig | None = None, kernel="single") -> FmmPlan:
    """Plan for piecewise-constant densities on ``mesh``, collocated at centroids."""
    config = config or FmmConfig()
    kernel = get_kernel(kernel)
    tree = _tree(mesh.centroids, config)
    spec = SurfaceSpec(config.p, bem_surface_offset(tree, mesh, config))
    ops = _operators(tree, spec, kernel, config)
    return _bem_plan_from(tree, mesh, ops, kernel, config, spec)


def plan(source, config: FmmConfig | None = None, kernel="single", normals=None) -> FmmPlan:
    """Dispatch to :func:`plan_bem` for meshes and :func:`plan_particles` otherwise."""
    if isinstance(source, TriMesh):
        return plan_bem(source, config, kernel)
    return plan_particles(source, config, kernel, normals)
