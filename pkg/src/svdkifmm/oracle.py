"""
Reference computations for tests and ``--check-dense`` runs.

Everything here is deliberately simple and quadratic (or worse): direct
pairwise sums, dense collocation matrices, closed-form triangle integrals
and dense spectral norms. Size guards keep accidental large runs out.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla

from .bem.mesh import BoundaryCondition, TriMesh
from .bem.quadrature import DEFAULT_QUADRATURE, DOUBLE, SINGLE, integrate_pairs, triangle_rule
from .kernel import COINCIDENCE_RTOL, CoincidentPointsError, INV_4PI, Layer, get_kernel

DENSE_BEM_MAX = 5000
DIRECT_SUM_MAX = 200_000


class OracleSizeError(ValueError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    pass


def direct_sum(points, q, kernel="single", normals=None, chunk: int = 1024) -> np.ndarray:
    """``p_i = sum_{j != i} G(x_i, x_j) q_j`` by brute force."""
    kernel = get_kernel(kernel)
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    q = np.asarray(q, dtype=float).ravel()
    n = len(x)
    if len(q) != n:
        raise ValueError("points and densities differ in length")
    if n > DIRECT_SUM_MAX:
        raise OracleSizeError(f"direct sum over {n} points exceeds the {DIRECT_SUM_MAX} guard")
    nrm = None if normals is None else np.asarray(normals, float).reshape(-1, 3)
    if kernel.needs_normals and nrm is None:
        raise ValueError("double layer requires normals")
    tol = COINCIDENCE_RTOL * float(np.linalg.norm(x.max(axis=0) - x.min(axis=0)))
    out = np.zeros(n)
    for a in range(0, n, chunk):
        diff = x[a:a + chunk, None, :] - x[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        rows = np.arange(a, min(a + chunk, n))
        r2[rows - a, rows] = np.inf
        if (r2 <= tol * tol).any():
            i, j = np.argwhere(r2 <= tol * tol)[0]
            raise CoincidentPointsError(f"points {a + i} and {j} coincide", pair=(a + i, j))
        if kernel.layer is Layer.SINGLE:
            G = INV_4PI / np.sqrt(r2)
        else:
            G = INV_4PI * np.einsum("ijk,jk->ij", diff, nrm) / (r2 * np.sqrt(r2))
        out[a:a + chunk] = G @ q
    return out


def relative_l2(a, b) -> float:
    """``|a - b| / |b|``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a - b))


def spectral_norm(A) -> float:
    return float(np.linalg.norm(A, 2))


# ---------------------------------------------------------------------------
# dense BEM

def dense_bem_matrix(mesh: TriMesh, kernel="single", quad=DEFAULT_QUADRATURE) -> np.ndarray:
    """``A[i, j] = int_{T_j} K(c_i, y) dy`` with the production quadrature."""
    n = mesh.n_elements
    if n > DENSE_BEM_MAX:
        raise OracleSizeError(f"dense assembly of {n} elements exceeds the {DENSE_BEM_MAX} "
                              "guard; use the FMM path")
    kind = SINGLE if get_kernel(kernel).layer is Layer.SINGLE else DOUBLE
    x = np.repeat(mesh.centroids, n, axis=0)
    elem = np.tile(np.arange(n), n)
    return integrate_pairs(x, elem, mesh.element_vertices, mesh.normals, kind,
                           quad).reshape(n, n)


def _solve(A, b):
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            return sla.solve(A, b)
        except (sla.LinAlgWarning, np.linalg.LinAlgError) as exc:
            raise SingularSystemError(f"dense collocation matrix is singular: {exc}") from None


def dense_bem_solve(mesh: TriMesh, bc, formulation: str = "dirichlet",
                    quad=DEFAULT_QUADRATURE):
    """Direct LU solve of the collocation system.

    ``formulation="dirichlet"`` solves ``S q = f`` (``bc`` may be an array);
    ``"mixed"`` solves the direct formulation for a :class:`BoundaryCondition`.
    Returns ``(u, q)``.
    """
    S = dense_bem_matrix(mesh, "single", quad)
    if formulation == "dirichlet":
        f = bc.values if isinstance(bc, BoundaryCondition) else np.asarray(bc, float)
        return f.copy(), _solve(S, f)
    if formulation != "mixed":
        raise ValueError(f"unknown formulation {formulation!r}")
    K = dense_bem_matrix(mesh, "double", quad)
    n = mesh.n_elements
    D = bc.dirichlet
    HK = 0.5 * np.eye(n) + K
    A = np.where(D[None, :], S, -HK)
    ud = np.where(D, bc.values, 0.0)
    qn = np.where(D, 0.0, bc.values)
    x = _solve(A, HK @ ud - S @ qn)
    return np.where(D, bc.values, x), np.where(D, x, bc.values)


# ---------------------------------------------------------------------------
# closed forms and refined quadrature for single triangles

def wilton_single(x, tri) -> float:
    """Closed-form ``int_T 1/(4 pi |x - y|) dy`` for any point ``x``."""
    x = np.asarray(x, float)
    tri = np.asarray(tri, float).reshape(3, 3)
    n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    n /= np.linalg.norm(n)
    h = float(np.dot(x - tri[0], n))
    rho = x - h * n
    total = 0.0
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        s = (b - a) / np.linalg.norm(b - a)
        m = np.cross(s, n)
        t0 = float(np.dot(a - rho, m))
        sm, sp = float(np.dot(a - rho, s)), float(np.dot(b - rho, s))
        Rm, Rp = np.linalg.norm(x - a), np.linalg.norm(x - b)
        R0sq = t0 * t0 + h * h
        if abs(t0) > 1e-300:
            log_term = np.log((Rp + sp) / (Rm + sm)) if (Rm + sm) > 0 else 0.0
            total += t0 * log_term
        if abs(h) > 0:
            total -= abs(h) * (np.arctan2(t0 * sp, R0sq + abs(h) * Rp)
                               - np.arctan2(t0 * sm, R0sq + abs(h) * Rm))
    return INV_4PI * total


def solid_angle_double(x, tri) -> float:
    """Closed-form ``int_T (x - y).n / (4 pi |x - y|^3) dy`` (signed solid angle)."""
    x = np.asarray(x, float)
    tri = np.asarray(tri, float).reshape(3, 3)
    a, b, c = tri - x
    la, lb, lc = np.linalg.norm(a), np.linalg.norm(b), np.linalg.norm(c)
    num = np.dot(a, np.cross(b, c))
    den = la * lb * lc + np.dot(a, b) * lc + np.dot(a, c) * lb + np.dot(b, c) * la
    # (y - x) . n convention of the solid angle is opposite to (x - y) . n
    return float(-2.0 * np.arctan2(num, den) * INV_4PI)


def _split(tri):
    v0, v1, v2 = tri
    m01, m12, m20 = 0.5 * (v0 + v1), 0.5 * (v1 + v2), 0.5 * (v2 + v0)
    return [np.array(t) for t in ((v0, m01, m20), (m01, v1, m12), (m20, m12, v2),
                                  (m01, m12, m20))]


def _rule_value(x, tri, f, rule):
    bary, w = rule
    y = bary @ tri
    area = 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    return area * float(f(x, y) @ w)


def _adaptive(x, tri, f, rtol, rule, depth, max_depth):
    whole = _rule_value(x, tri, f, rule)
    parts = [_rule_value(x, t, f, rule) for t in _split(tri)]
    fine = sum(parts)
    if abs(fine - whole) <= rtol * max(abs(fine), 1e-300) or depth >= max_depth:
        return fine
    return sum(_adaptive(x, t, f, rtol, rule, depth + 1, max_depth) for t in _split(tri))


def _single_f(x, y):
    return INV_4PI / np.linalg.norm(y - x, axis=1)


def adaptive_integral(x, tri, kernel="single", normal=None, rtol: float = 1e-13,
                      max_depth: int = 12) -> float:
    """Adaptive 4-way refinement with a 25-point rule (x must not lie on ``tri``)."""
    tri = np.asarray(tri, float).reshape(3, 3)
    x = np.asarray(x, float)
    if get_kernel(kernel).layer is Layer.SINGLE:
        f = _single_f
    else:
        n = np.asarray(normal, float)

        def f(x, y):
            d = x - y
            r = np.linalg.norm(d, axis=1)
            return INV_4PI * (d @ n) / r**3
    return _adaptive(x, tri, f, rtol, triangle_rule(25), 0, max_depth)


def self_term_single(tri, rtol: float = 1e-13) -> float:
    """Single-layer integral over a triangle at its own centroid.

    The medial triangle shares the centroid and is a half-size copy of the
    triangle rotated by 180 degrees, so its integral is half the total:
    ``I = 2 * (I_1 + I_2 + I_3)`` over the three corner triangles, which
    are regular and integrated adaptively.
    """
    tri = np.asarray(tri, float).reshape(3, 3)
    c = tri.mean(axis=0)
    corners = _split(tri)[:3]
    return 2.0 * sum(_adaptive(c, t, _single_f, rtol, triangle_rule(25), 0, 12)
                     for t in corners)
