"""
Two-stage SVD compression of the M2L operators and projection of the
upward/downward pass operators onto the retained subspaces.

Stage one stacks the 316 M2L matrices into a fat (row) and a thin (column)
matrix and keeps the dominant left/right singular vectors, ``U~`` and
``R~``; every M2L block becomes ``K~ = U~^T K R~``. Stage two replaces each
``K~`` by a truncated SVD ``U^ V^``. For homogeneous kernels everything is
built once at unit halfwidth and rescaled per level by a scalar.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .kernel import LAPLACE_SINGLE, KernelSpec, get_kernel
from .octree import offset_table
from .surfaces import SurfaceSpec
from .translation import (DEFAULT_CUTOFF, build_l2l, build_m2m, downward_solver,
                          m2l_matrix, upward_solver)


class CompressionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# thresholds

def epsilon1(C1: float, L: int) -> float:
    """Stage-one relative threshold ``C1 * 2**-L / L``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if not C1 > 0:
        raise ValueError("C1 must be positive")
    return C1 * 2.0**-L / L


def epsilon2(C2: float, eps1: float, p_tilde: int) -> float:
    """Stage-two relative threshold ``C2 * eps1 / p_tilde``."""
    if p_tilde < 1:
        raise ValueError("p_tilde must be >= 1")
    if C2 < 0:
        raise ValueError("C2 must be >= 0")
    return C2 * eps1 / p_tilde


def scale_to_level(level: int, r0: float, m: int) -> float:
    """Factor ``(r0 / 2**level)**m`` taking unit-halfwidth operators to ``level``."""
    return (r0 / 2.0**level) ** m


# ---------------------------------------------------------------------------
# stage one

@dataclass(frozen=True)
class Projectors:
    U_tilde: np.ndarray  # (n, p_row), orthonormal columns
    R_tilde: np.ndarray  # (n, p_col), orthonormal columns
    epsilon1: float
    sigma_fat: np.ndarray  # singular values of K_fat, descending
    sigma_thin: np.ndarray

    @property
    def retained_row_dim(self) -> int:
        return self.U_tilde.shape[1]

    @property
    def retained_col_dim(self) -> int:
        return self.R_tilde.shape[1]

    @property
    def sigma_max(self) -> float:
        return float(self.sigma_fat[0])


def assemble_fat_thin(m2l_set: Sequence[np.ndarray]):
    """Row-wise (fat) and column-wise (thin) concatenation of the M2L blocks."""
    mats = [np.asarray(m, dtype=float) for m in m2l_set]
    if not mats:
        raise ValueError("empty M2L set")
    shape = mats[0].shape
    for k, m in enumerate(mats):
        if m.shape != shape or m.ndim != 2:
            raise ValueError(f"M2L block {k} has shape {m.shape}, expected {shape}")
    return np.hstack(mats), np.vstack(mats)


def _dominant_eigvecs(gram: np.ndarray, eps1: float):
    w, V = np.linalg.eigh(gram)
    w = w[::-1]
    V = V[:, ::-1]
    sigma = np.sqrt(np.clip(w, 0.0, None))
    keep = sigma >= eps1 * sigma[0]
    if not keep.any():
        raise CompressionError(f"epsilon1={eps1} retains no singular vectors")
    # sign convention: largest-magnitude entry of each vector positive
    Vk = V[:, keep]
    flip = np.sign(Vk[np.argmax(np.abs(Vk), axis=0), np.arange(Vk.shape[1])])
    return np.ascontiguousarray(Vk * flip), sigma


def _check_eps1(eps1):
    if not 0.0 < eps1 < 1.0:
        raise ValueError(f"epsilon1 must lie in (0, 1), got {eps1}")


def compute_projectors(K_fat: np.ndarray, K_thin: Optional[np.ndarray] = None,
                       epsilon1: float = 1e-3, symmetric: bool = False,
                       method: str = "gram") -> Projectors:
    """Row and column projectors of the stacked M2L operators.

    ``method="gram"`` (default) takes the SVD through the eigendecomposition
    of the ``n x n`` Gram matrices; ``method="svd"`` calls a dense SVD.
    When ``symmetric`` the thin matrix is not factorized: its right singular
    vectors are the fat matrix's left singular vectors.
    """
    _check_eps1(epsilon1)
    if method == "gram":
        U, s_fat = _dominant_eigvecs(K_fat @ K_fat.T, epsilon1)
        if symmetric or K_thin is None:
            if not symmetric:
                raise ValueError("K_thin is required for non-symmetric kernels")
            return Projectors(U, U, epsilon1, s_fat, s_fat)
        R, s_thin = _dominant_eigvecs(K_thin.T @ K_thin, epsilon1)
        return Projectors(U, R, epsilon1, s_fat, s_thin)
    if method == "svd":
        Uf, s_fat, _ = np.linalg.svd(K_fat, full_matrices=False)
        U = Uf[:, s_fat >= epsilon1 * s_fat[0]]
        if symmetric:
            return Projectors(U, U, epsilon1, s_fat, s_fat)
        _, s_thin, Vt = np.linalg.svd(K_thin, full_matrices=False)
        R = Vt[s_thin >= epsilon1 * s_thin[0]].T
        return Projectors(U, R, epsilon1, s_fat, s_thin)
    raise ValueError(f"unknown method {method!r}")


def projectors_from_blocks(blocks: np.ndarray, epsilon1: float, symmetric: bool) -> Projectors:
    """Same as :func:`compute_projectors` but never materializes ``K_fat``."""
    _check_eps1(epsilon1)
    gram_fat = np.einsum("oij,okj->ik", blocks, blocks, optimize=True)
    U, s_fat = _dominant_eigvecs(gram_fat, epsilon1)
    if symmetric:
        return Projectors(U, U, epsilon1, s_fat, s_fat)
    gram_thin = np.einsum("oji,ojk->ik", blocks, blocks, optimize=True)
    R, s_thin = _dominant_eigvecs(gram_thin, epsilon1)
    return Projectors(U, R, epsilon1, s_fat, s_thin)


def compress_m2l(K: np.ndarray, proj: Projectors) -> np.ndarray:
    """``K~ = U~^T K R~``."""
    return proj.U_tilde.T @ K @ proj.R_tilde


# ---------------------------------------------------------------------------
# stage two

def low_rank_factor(K_tilde: np.ndarray, epsilon2: float, sigma_max_fat: float):
    """Truncated SVD ``K~ ~= U^ V^`` dropping singular values below
    ``epsilon2 * sigma_max_fat``; ``V^`` carries the singular values."""
    if epsilon2 < 0:
        raise ValueError("epsilon2 must be >= 0")
    U, s, Vt = np.linalg.svd(K_tilde, full_matrices=False)
    keep = s >= epsilon2 * sigma_max_fat
    k = int(keep.sum())
    return np.ascontiguousarray(U[:, :k]), np.ascontiguousarray(s[:k, None] * Vt[:k]), k


@dataclass
class CompressedM2L:
    """Per-offset M2L operators in dense or factored form.

    ``dense[o]`` holds ``K~`` when the factored form would not be cheaper;
    otherwise ``factors[o] = (U^, V^)``. Rank 0 blocks are stored as zero
    factors of width 0.
    """

    row_dim: int
    col_dim: int
    epsilon2: float
    sigma_max_fat: float
    ranks: np.ndarray
    dense: dict = field(default_factory=dict)
    factors: dict = field(default_factory=dict)
    stage2_errors: Optional[np.ndarray] = None

    def is_factored(self, oid: int) -> bool:
        return oid in self.factors

    def matrix(self, oid: int) -> np.ndarray:
        if oid in self.dense:
            return self.dense[oid]
        U, V = self.factors[oid]
        return U @ V

    def apply_rows(self, oid: int, X: np.ndarray) -> np.ndarray:
        """Apply block ``oid`` to the rows of ``X`` (shape ``(k, col_dim)``)."""
        if oid in self.dense:
            return X @ self.dense[oid].T
        U, V = self.factors[oid]
        return (X @ V.T) @ U.T

    def nbytes(self) -> int:
        total = sum(m.nbytes for m in self.dense.values())
        total += sum(U.nbytes + V.nbytes for U, V in self.factors.values())
        return total


def factor_m2l_set(K_tildes: Sequence[np.ndarray], epsilon2: float,
                   sigma_max_fat: float, keep_dense_only: bool = False) -> CompressedM2L:
    """Stage two over all offsets, choosing the cheaper storage per block."""
    p_row, p_col = K_tildes[0].shape
    out = CompressedM2L(p_row, p_col, epsilon2, sigma_max_fat,
                        np.zeros(len(K_tildes), dtype=np.int64))
    errs = np.zeros(len(K_tildes))
    for o, Kt in enumerate(K_tildes):
        if keep_dense_only:
            out.dense[o] = Kt
            out.ranks[o] = min(p_row, p_col)
            continue
        U, s, Vt = np.linalg.svd(Kt, full_matrices=False)
        keep = s >= epsilon2 * sigma_max_fat
        k = int(keep.sum())
        errs[o] = s[k] if k < len(s) else 0.0
        if errs[o] > epsilon2 * sigma_max_fat * (1 + 1e-12):
            raise CompressionError(f"stage-two bound violated for offset {o}")
        out.ranks[o] = k
        if k * (p_row + p_col) < p_row * p_col:
            out.factors[o] = (np.ascontiguousarray(U[:, :k]),
                              np.ascontiguousarray(s[:k, None] * Vt[:k]))
        else:
            out.dense[o] = np.ascontiguousarray(Kt)
    out.stage2_errors = errs
    return out


# ---------------------------------------------------------------------------
# pass operators

@dataclass(frozen=True)
class CompressedPassOps:
    S_tilde: np.ndarray
    M_tilde: np.ndarray  # (8, p_col, p_col_child)
    L_tilde: np.ndarray  # (8, p_row_child, p_row)
    T_tilde: np.ndarray


def transform_pass_ops(S: np.ndarray, M_set, L_set, T: np.ndarray, proj: Projectors,
                       child_proj: Optional[Projectors] = None) -> CompressedPassOps:
    """``S~ = R~^T S``, ``M~ = R~^T M R~``, ``L~ = U~^T L U~``, ``T~ = T U~``.

    ``child_proj`` supplies the projectors of the finer level when they
    differ (non-homogeneous kernels); M2M and L2L then map between the two
    subspaces.
    """
    child = child_proj if child_proj is not None else proj
    n = proj.U_tilde.shape[0]
    if child.U_tilde.shape[0] != n:
        raise CompressionError("projectors of adjacent levels act on different surfaces")
    R, U = proj.R_tilde, proj.U_tilde
    S_t = R.T @ S
    M_t = np.stack([R.T @ M @ child.R_tilde for M in M_set])
    L_t = np.stack([child.U_tilde.T @ Lm @ U for Lm in L_set])
    T_t = T @ child.U_tilde if T.shape[1] == n else None
    if T_t is None:
        raise CompressionError(f"L2T operator has {T.shape[1]} columns, expected {n}")
    return CompressedPassOps(S_t, M_t, L_t, T_t)


# ---------------------------------------------------------------------------
# operator sets used by the engine

@dataclass
class LevelOps:
    """Everything the engine needs to run one level."""

    up_dim: int
    down_dim: int
    s2m: np.ndarray  # (up_dim, n): upward check potentials -> compressed densities
    m2m: np.ndarray  # (8, up_dim, up_dim_child)
    m2l: CompressedM2L
    l2l: np.ndarray  # (8, down_dim_child, down_dim)
    l2t: np.ndarray  # (n, down_dim): compressed check potentials -> downward equiv densities
    projectors: Optional[Projectors]


@dataclass
class OperatorSet:
    """Translation operators for one (surface, kernel, tolerance) setting.

    For homogeneous kernels ``unit`` holds operators built at halfwidth 1 and
    :meth:`scales` returns the scalar factors for a level. Otherwise
    ``per_level`` holds operators built natively at every level.
    """

    spec: SurfaceSpec
    kernel: KernelSpec
    mode: str
    epsilon1: float
    epsilon2: float
    cutoff: float
    homogeneous: bool
    unit: Optional[LevelOps] = None
    per_level: dict = field(default_factory=dict)
    r0: float = 1.0

    def ops(self, level: int) -> LevelOps:
        if self.homogeneous:
            return self.unit
        return self.per_level[max(level, 2)]

    def scales(self, level: int) -> tuple[float, float]:
        """(m2l factor, check-to-equivalent factor) for cubes at ``level``."""
        if not self.homogeneous:
            return 1.0, 1.0
        m = self.kernel.homogeneity_degree
        return scale_to_level(level, self.r0, m), scale_to_level(level, self.r0, -m)

    def nbytes(self) -> int:
        total = 0
        seen = set()
        levels = [self.unit] if self.homogeneous else list(self.per_level.values())
        for lv in levels:
            for arr in (lv.s2m, lv.m2m, lv.l2l, lv.l2t):
                if id(arr) not in seen:
                    seen.add(id(arr))
                    total += arr.nbytes
            total += lv.m2l.nbytes()
        return total


def _build_level(halfwidth, spec, kernel, eps1, C2, cutoff, mode, proj_cache=None):
    up = upward_solver(halfwidth, spec, kernel, cutoff)
    down = downward_solver(halfwidth, spec, kernel, cutoff)
    M = np.stack([build_m2m(halfwidth, o, spec, kernel, cutoff, up) for o in range(8)])
    L = np.stack([build_l2l(halfwidth, o, spec, kernel, cutoff, down) for o in range(8)])
    blocks = np.stack([m2l_matrix(o, halfwidth, spec, kernel) for o in offset_table()])
    n = spec.n_points
    if mode == "dense":
        m2l = factor_m2l_set(list(blocks), 0.0, 1.0, keep_dense_only=True)
        return LevelOps(n, n, up.check_to_equiv, M, m2l, L, down.check_to_equiv, None), None
    proj = projectors_from_blocks(blocks, eps1, kernel.symmetric)
    Kt = np.einsum("ia,oij,jb->oab", proj.U_tilde, blocks, proj.R_tilde, optimize=True)
    p_tilde = max(proj.retained_row_dim, proj.retained_col_dim)
    eps2 = epsilon2(C2, eps1, p_tilde)
    m2l = factor_m2l_set(list(Kt), eps2, proj.sigma_max)
    pas = transform_pass_ops(up.check_to_equiv, M, L, down.check_to_equiv, proj)
    return LevelOps(proj.retained_col_dim, proj.retained_row_dim, pas.S_tilde, pas.M_tilde,
                    m2l, pas.L_tilde, pas.T_tilde, proj), eps2


@lru_cache(maxsize=4)
def _homogeneous_set(spec, kernel, eps1, C2, cutoff, mode):
    unit, eps2 = _build_level(1.0, spec, kernel, eps1, C2, cutoff, mode)
    return unit, eps2


def build_operator_set(spec: SurfaceSpec, kernel=LAPLACE_SINGLE, epsilon1: float = 1e-3,
                       C2: float = 10.0, cutoff: float = DEFAULT_CUTOFF, mode: str = "svd",
                       r0: float = 1.0, depth: int = 2) -> OperatorSet:
    """Assemble (and for ``mode="svd"`` compress) every translation operator.

    ``mode="dense"`` keeps the uncompressed 316 M2L matrices and identity
    projectors; it is the baseline the compressed scheme is compared to.
    """
    kernel = get_kernel(kernel)
    if mode not in ("svd", "dense"):
        raise ValueError(f"mode must be 'svd' or 'dense', got {mode!r}")
    if mode == "svd":
        _check_eps1(epsilon1)
    if kernel.homogeneity_degree is not None:
        unit, eps2 = _homogeneous_set(spec, kernel, float(epsilon1), float(C2),
                                      float(cutoff), mode)
        return OperatorSet(spec, kernel, mode, epsilon1, eps2 or 0.0, cutoff, True,
                           unit=unit, r0=r0)
    per_level = {}
    eps2 = 0.0
    for lev in range(2, depth + 1):
        per_level[lev], e2 = _build_level(r0 / 2.0**lev, spec, kernel, epsilon1, C2,
                                          cutoff, mode)
        eps2 = e2 or 0.0
    if mode == "svd":
        # M2M/L2L link adjacent levels: re-project onto the finer level's subspaces
        for lev in range(2, depth):
            coarse, fine = per_level[lev], per_level[lev + 1]
            hw = r0 / 2.0**lev
            up = upward_solver(hw, spec, kernel, cutoff)
            down = downward_solver(hw, spec, kernel, cutoff)
            M = [build_m2m(hw, o, spec, kernel, cutoff, up) for o in range(8)]
            L = [build_l2l(hw, o, spec, kernel, cutoff, down) for o in range(8)]
            pas = transform_pass_ops(up.check_to_equiv, M, L, down.check_to_equiv,
                                     coarse.projectors, fine.projectors)
            coarse.m2m = pas.M_tilde
            coarse.l2l = pas.L_tilde
    return OperatorSet(spec, kernel, mode, epsilon1, eps2, cutoff, False,
                       per_level=per_level, r0=r0)


# ---------------------------------------------------------------------------
# diagnostics

@dataclass
class CompressionReport:
    """Per-offset view of the two stages at unit halfwidth.

    Errors are spectral norms: ``stage1[o] = |U~ K~ R~^T - K|``,
    ``stage2[o] = |U^ V^ - K~|`` and ``total[o] = |U~ U^ V^ R~^T - K|``.
    """

    original_dim: int
    row_dim: int
    col_dim: int
    epsilon1: float
    epsilon2: float
    sigma_max_fat: float
    ranks: np.ndarray
    stage1: np.ndarray
    stage2: np.ndarray
    total: np.ndarray


def compression_report(spec: SurfaceSpec, kernel=LAPLACE_SINGLE, epsilon1: float = 1e-3,
                       C2: float = 10.0, epsilon2_override: Optional[float] = None,
                       norms: bool = True) -> CompressionReport:
    kernel = get_kernel(kernel)
    _check_eps1(epsilon1)
    blocks = np.stack([m2l_matrix(o, 1.0, spec, kernel) for o in offset_table()])
    proj = projectors_from_blocks(blocks, epsilon1, kernel.symmetric)
    U, R = proj.U_tilde, proj.R_tilde
    Kt = np.einsum("ia,oij,jb->oab", U, blocks, R, optimize=True)
    p_tilde = max(proj.retained_row_dim, proj.retained_col_dim)
    eps2 = epsilon2(C2, epsilon1, p_tilde) if epsilon2_override is None else epsilon2_override
    m2l = factor_m2l_set(list(Kt), eps2, proj.sigma_max)
    n = len(offset_table())
    s1, s2, tot = np.zeros(n), np.zeros(n), np.zeros(n)
    if norms:
        for o in range(n):
            approx = m2l.matrix(o)
            s1[o] = np.linalg.norm(U @ Kt[o] @ R.T - blocks[o], 2)
            s2[o] = np.linalg.norm(approx - Kt[o], 2)
            tot[o] = np.linalg.norm(U @ approx @ R.T - blocks[o], 2)
    return CompressionReport(spec.n_points, proj.retained_row_dim, proj.retained_col_dim,
                             epsilon1, eps2, proj.sigma_max, m2l.ranks.copy(), s1, s2, tot)
