"""
Uncompressed KIFMM translation operators (S2M, M2M, M2L, L2L, L2T).

All operators are assembled in the local frame of the cube that owns them,
so they depend only on (halfwidth, octant/offset, p, d, kernel) and never
on absolute position. Equivalent densities are recovered from check
potentials with a truncated-SVD pseudo-inverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import LAPLACE_SINGLE, KernelSpec, get_kernel, kernel_matrix
from .octree import OCTANTS, offset_id
from .surfaces import SurfaceCloud, SurfaceRole, SurfaceSpec, unit_surface

DEFAULT_CUTOFF = 1e-12


class DegenerateGeometryError(RuntimeError):
    pass


@dataclass(frozen=True)
class EquivSolver:
    """Truncated pseudo-inverse of the equivalent-to-check matrix ``E``."""

    check_to_equiv: np.ndarray
    cutoff: float
    role: str
    rank: int
    singular_values: np.ndarray

    def __call__(self, check_potentials: np.ndarray) -> np.ndarray:
        return self.check_to_equiv @ check_potentials


def build_equiv_solver(equiv_cloud: SurfaceCloud, check_cloud: SurfaceCloud,
                       kernel: KernelSpec = LAPLACE_SINGLE,
                       cutoff: float = DEFAULT_CUTOFF, role: str = "upward") -> EquivSolver:
    """Pseudo-inverse of ``E[i, j] = G(check_i, equiv_j)``.

    Singular values below ``cutoff * sigma_max`` are discarded.
    """
    if not 0.0 < cutoff <= 1.0:
        raise ValueError(f"cutoff must lie in (0, 1], got {cutoff}")
    E = kernel_matrix(check_cloud.points, equiv_cloud.points, get_kernel(kernel))
    U, s, Vt = np.linalg.svd(E)
    if s[0] == 0.0 or not np.isfinite(s[0]):
        raise DegenerateGeometryError("equivalent-to-check matrix is numerically rank 0")
    keep = s >= cutoff * s[0]
    pinv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    return EquivSolver(pinv, cutoff, role, int(keep.sum()), s)


def _cloud(center, halfwidth, spec: SurfaceSpec, role: SurfaceRole) -> SurfaceCloud:
    hw = spec.factor(role) * halfwidth
    return SurfaceCloud(np.asarray(center, float) + hw * unit_surface(spec.p), role,
                        np.asarray(center, float), hw)


def upward_solver(halfwidth: float, spec: SurfaceSpec, kernel=LAPLACE_SINGLE,
                  cutoff: float = DEFAULT_CUTOFF) -> EquivSolver:
    origin = np.zeros(3)
    return build_equiv_solver(_cloud(origin, halfwidth, spec, SurfaceRole.UPWARD_EQUIVALENT),
                              _cloud(origin, halfwidth, spec, SurfaceRole.UPWARD_CHECK),
                              kernel, cutoff, "upward")


def downward_solver(halfwidth: float, spec: SurfaceSpec, kernel=LAPLACE_SINGLE,
                    cutoff: float = DEFAULT_CUTOFF) -> EquivSolver:
    origin = np.zeros(3)
    return build_equiv_solver(_cloud(origin, halfwidth, spec, SurfaceRole.DOWNWARD_EQUIVALENT),
                              _cloud(origin, halfwidth, spec, SurfaceRole.DOWNWARD_CHECK),
                              kernel, cutoff, "downward")


def child_offset(octant: int, parent_halfwidth: float) -> np.ndarray:
    """Center of child ``octant`` relative to its parent's center."""
    if not 0 <= int(octant) < 8:
        raise ValueError(f"octant must be in 0..7, got {octant}")
    return (2.0 * OCTANTS[int(octant)] - 1.0) * (0.5 * parent_halfwidth)


def build_m2m(parent_halfwidth: float, child_octant: int, spec: SurfaceSpec,
              kernel=LAPLACE_SINGLE, cutoff: float = DEFAULT_CUTOFF,
              solver: EquivSolver | None = None) -> np.ndarray:
    """Child upward-equivalent densities -> parent upward-equivalent densities."""
    kernel = get_kernel(kernel)
    if solver is None:
        solver = upward_solver(parent_halfwidth, spec, kernel, cutoff)
    child = _cloud(child_offset(child_octant, parent_halfwidth), 0.5 * parent_halfwidth,
                   spec, SurfaceRole.UPWARD_EQUIVALENT)
    check = _cloud(np.zeros(3), parent_halfwidth, spec, SurfaceRole.UPWARD_CHECK)
    return solver.check_to_equiv @ kernel_matrix(check.points, child.points, kernel)


def build_l2l(parent_halfwidth: float, child_octant: int, spec: SurfaceSpec,
              kernel=LAPLACE_SINGLE, cutoff: float = DEFAULT_CUTOFF,
              solver: EquivSolver | None = None) -> np.ndarray:
    """Parent downward-check potentials -> child downward-check potentials."""
    kernel = get_kernel(kernel)
    if solver is None:
        solver = downward_solver(parent_halfwidth, spec, kernel, cutoff)
    equiv = _cloud(np.zeros(3), parent_halfwidth, spec, SurfaceRole.DOWNWARD_EQUIVALENT)
    child = _cloud(child_offset(child_octant, parent_halfwidth), 0.5 * parent_halfwidth,
                   spec, SurfaceRole.DOWNWARD_CHECK)
    return kernel_matrix(child.points, equiv.points, kernel) @ solver.check_to_equiv


def build_m2l(offset, level: int, spec: SurfaceSpec, kernel=LAPLACE_SINGLE,
              r0: float = 1.0) -> np.ndarray:
    """Source upward-equivalent densities -> target downward-check potentials.

    The target cube sits at ``offset * 2r`` from the source, ``r = r0 / 2**level``.
    """
    offset = np.asarray(offset, dtype=np.int64).reshape(3)
    if offset_id(offset) < 0:
        raise ValueError(f"offset {tuple(offset)} is not a far-field interaction offset")
    r = r0 / 2.0**level
    return m2l_matrix(offset, r, spec, get_kernel(kernel))


def m2l_matrix(offset, r: float, spec: SurfaceSpec, kernel: KernelSpec) -> np.ndarray:
    src = _cloud(np.zeros(3), r, spec, SurfaceRole.UPWARD_EQUIVALENT)
    tgt = _cloud(2.0 * r * np.asarray(offset, float), r, spec, SurfaceRole.DOWNWARD_CHECK)
    return kernel_matrix(tgt.points, src.points, kernel)


def build_l2t(targets, leaf_center, leaf_halfwidth: float, spec: SurfaceSpec,
              kernel=LAPLACE_SINGLE, cutoff: float = DEFAULT_CUTOFF,
              solver: EquivSolver | None = None) -> np.ndarray:
    """Leaf downward-check potentials -> potentials at ``targets``."""
    kernel = get_kernel(kernel)
    local = np.asarray(targets, float).reshape(-1, 3) - np.asarray(leaf_center, float)
    limit = spec.factor(SurfaceRole.DOWNWARD_EQUIVALENT) * leaf_halfwidth
    if (np.abs(local).max(axis=1) >= limit).any():
        raise ValueError("L2T target outside the leaf's downward-equivalent surface")
    if solver is None:
        solver = downward_solver(leaf_halfwidth, spec, kernel, cutoff)
    equiv = _cloud(np.zeros(3), leaf_halfwidth, spec, SurfaceRole.DOWNWARD_EQUIVALENT)
    return kernel_matrix(local, equiv.points, kernel) @ solver.check_to_equiv


def build_s2m(sources, leaf_center, leaf_halfwidth: float, spec: SurfaceSpec,
              source_kernel=LAPLACE_SINGLE, normals=None, kernel=LAPLACE_SINGLE,
              cutoff: float = DEFAULT_CUTOFF, solver: EquivSolver | None = None) -> np.ndarray:
    """Point sources -> leaf upward-equivalent densities.

    ``source_kernel`` produces the check potentials (double layer allowed);
    the equivalent densities always use ``kernel``.
    """
    local = np.asarray(sources, float).reshape(-1, 3) - np.asarray(leaf_center, float)
    limit = spec.factor(SurfaceRole.UPWARD_CHECK) * leaf_halfwidth
    if (np.abs(local).max(axis=1) >= limit).any():
        raise ValueError("S2M source outside the leaf's upward-check surface")
    if solver is None:
        solver = upward_solver(leaf_halfwidth, spec, kernel, cutoff)
    check = _cloud(np.zeros(3), leaf_halfwidth, spec, SurfaceRole.UPWARD_CHECK)
    return solver.check_to_equiv @ kernel_matrix(check.points, local,
                                                 get_kernel(source_kernel), normals)


@dataclass(frozen=True)
class LevelOperators:
    """Uncompressed translation operators for cubes of one halfwidth."""

    halfwidth: float
    s2m_equiv_solver: EquivSolver
    m2m: np.ndarray  # (8, n, n), children one level finer
    m2l: np.ndarray  # (316, n, n)
    l2l: np.ndarray  # (8, n, n)
    l2t_equiv_solver: EquivSolver


def build_level_operators(halfwidth: float, spec: SurfaceSpec, kernel=LAPLACE_SINGLE,
                          cutoff: float = DEFAULT_CUTOFF) -> LevelOperators:
    from .octree import offset_table

    kernel = get_kernel(kernel)
    up = upward_solver(halfwidth, spec, kernel, cutoff)
    down = downward_solver(halfwidth, spec, kernel, cutoff)
    m2m = np.stack([build_m2m(halfwidth, o, spec, kernel, cutoff, up) for o in range(8)])
    l2l = np.stack([build_l2l(halfwidth, o, spec, kernel, cutoff, down) for o in range(8)])
    m2l = np.stack([m2l_matrix(o, halfwidth, spec, kernel) for o in offset_table()])
    return LevelOperators(halfwidth, up, m2m, m2l, l2l, down)
