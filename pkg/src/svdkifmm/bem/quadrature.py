"""
Integration of the Laplace kernels over flat triangles with a constant basis.

Regular pairs use a fixed Gauss rule; near-singular pairs are subdivided
4-way until every piece is at least ``theta`` diameters from the collocation
point; a point lying on the element itself takes the closed-form path
(in-plane single layer, identically zero double layer).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

INV_4PI = 1.0 / (4.0 * np.pi)
SINGLE, DOUBLE = 0, 1


class QuadratureWarning(RuntimeWarning):
    pass


@lru_cache(maxsize=None)
def triangle_rule(n_points: int = 6):
    """Barycentric points and weights (summing to 1) of a symmetric rule.

    1 point (degree 1), 3 points (degree 2), 6 points (degree 4), 7 points
    (degree 5). Other counts ``n*n`` give a collapsed Gauss-Legendre rule.
    """
    if n_points == 1:
        bary = np.array([[1 / 3, 1 / 3, 1 / 3]])
        w = np.array([1.0])
    elif n_points == 3:
        bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 3)
    elif n_points == 6:
        a, b = 0.445948490915965, 0.091576213509771
        wa, wb = 0.223381589678011, 0.109951743655322
        bary = np.array([[1 - 2 * a, a, a], [a, 1 - 2 * a, a], [a, a, 1 - 2 * a],
                         [1 - 2 * b, b, b], [b, 1 - 2 * b, b], [b, b, 1 - 2 * b]])
        w = np.array([wa] * 3 + [wb] * 3)
    elif n_points == 7:
        s15 = np.sqrt(15.0)
        a1, a2 = (6 - s15) / 21, (6 + s15) / 21
        w1, w2 = (155 - s15) / 1200, (155 + s15) / 1200
        bary = np.array([[1 / 3, 1 / 3, 1 / 3],
                         [1 - 2 * a1, a1, a1], [a1, 1 - 2 * a1, a1], [a1, a1, 1 - 2 * a1],
                         [1 - 2 * a2, a2, a2], [a2, 1 - 2 * a2, a2], [a2, a2, 1 - 2 * a2]])
        w = np.array([9 / 40] + [w1] * 3 + [w2] * 3)
    else:
        n = int(round(np.sqrt(n_points)))
        if n * n != n_points:
            raise ValueError(f"no triangle rule with {n_points} points")
        x, wx = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (x + 1.0)
        wu = 0.5 * wx
        U, V = np.meshgrid(u, u, indexing="ij")
        W = np.outer(wu, wu) * (1.0 - U)
        l1 = U.ravel()
        l2 = (V * (1.0 - U)).ravel()
        bary = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
        w = 2.0 * W.ravel()
    w = w / w.sum()
    bary.setflags(write=False)
    w.setflags(write=False)
    return bary, w


@dataclass(frozen=True)
class ElementQuadrature:
    n_points: int = 6
    theta: float = 2.0
    max_depth: int = 10
    on_element_rtol: float = 1e-10

    def __post_init__(self):
        bary, w = triangle_rule(self.n_points)
        if (w <= 0).any() or abs(w.sum() - 1.0) > 1e-14:
            raise ValueError("quadrature weights must be positive and sum to one")


DEFAULT_QUADRATURE = ElementQuadrature()


def _areas_normals(tris):
    cr = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    a2 = np.linalg.norm(cr, axis=1)
    return 0.5 * a2, cr / a2[:, None]


def _diameters(tris):
    e = np.stack([tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 1], tris[:, 0] - tris[:, 2]], 1)
    return np.sqrt(np.einsum("pek,pek->pe", e, e).max(axis=1))


def _gauss(x, tris, normals, kind, rule):
    bary, w = rule
    areas, _ = _areas_normals(tris)
    y = np.einsum("qv,pvk->pqk", bary, tris)
    diff = x[:, None, :] - y
    r2 = np.einsum("pqk,pqk->pq", diff, diff)
    if kind == SINGLE:
        f = 1.0 / np.sqrt(r2)
    else:
        f = np.einsum("pqk,pk->pq", diff, normals) / (r2 * np.sqrt(r2))
    return INV_4PI * areas * (f @ w)


def inplane_single(x, tris):
    """Closed-form ``int 1/(4 pi |x-y|) dy`` for ``x`` in the triangle's plane."""
    _, n = _areas_normals(tris)
    total = np.zeros(len(x))
    for k in range(3):
        a = tris[:, k]
        b = tris[:, (k + 1) % 3]
        edge = b - a
        elen = np.linalg.norm(edge, axis=1)
        t = edge / elen[:, None]
        nu = np.cross(t, n)
        h = np.einsum("pk,pk->p", a - x, nu)
        sa = np.einsum("pk,pk->p", a - x, t)
        sb = np.einsum("pk,pk->p", b - x, t)
        ah = np.abs(h)
        # h asinh(s/h) -> 0 as h -> 0; tiny h would overflow s/h
        nz = ah > 1e-14 * elen
        hh = np.where(nz, ah, 1.0)
        total += np.where(nz, h * (np.arcsinh(sb / hh) - np.arcsinh(sa / hh)), 0.0)
    return INV_4PI * total


def _on_element(x, tris, rtol):
    """Mask of points lying on their triangle (in plane and inside)."""
    _, n = _areas_normals(tris)
    diam = _diameters(tris)
    height = np.einsum("pk,pk->p", x - tris[:, 0], n)
    inplane = np.abs(height) <= rtol * diam
    inside = np.ones(len(x), dtype=bool)
    for k in range(3):
        a = tris[:, k]
        b = tris[:, (k + 1) % 3]
        side = np.einsum("pk,pk->p", np.cross(b - a, x - a), n)
        inside &= side >= -rtol * diam**2
    return inplane & inside


def element_integrals(x, tris, normals, kind: int = SINGLE,
                      quad: ElementQuadrature = DEFAULT_QUADRATURE,
                      on_element=None) -> np.ndarray:
    """Vectorized ``int_tri K(x_p, y) dy`` for pairs ``(x[p], tris[p])``.

    Parameters
    ----------
    x : (P, 3) array
    tris : (P, 3, 3) array of triangle vertices
    normals : (P, 3) array of unit element normals (used by the double layer)
    kind : 0 single layer, 1 double layer
    on_element : optional (P,) bool mask overriding the on-element detection
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    tris = np.asarray(tris, dtype=float).reshape(-1, 3, 3)
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    out = np.zeros(len(x))
    if len(x) == 0:
        return out
    on = _on_element(x, tris, quad.on_element_rtol) if on_element is None else on_element
    if on.any() and kind == SINGLE:
        out[on] = inplane_single(x[on], tris[on])
    idx = np.nonzero(~on)[0]
    rule = triangle_rule(quad.n_points)
    X, T, N, owner = x[idx], tris[idx], normals[idx], idx
    depth = 0
    while len(owner):
        c = T.mean(axis=1)
        dist = np.linalg.norm(X - c, axis=1)
        ok = dist >= quad.theta * _diameters(T)
        if depth >= quad.max_depth:
            if not ok.all():
                warnings.warn(f"{int((~ok).sum())} sub-triangles still near-singular at "
                              f"subdivision depth {depth}", QuadratureWarning, stacklevel=2)
            ok[:] = True
        if ok.any():
            np.add.at(out, owner[ok], _gauss(X[ok], T[ok], N[ok], kind, rule))
        rest = ~ok
        if not rest.any():
            break
        X, T, N, owner = X[rest], T[rest], N[rest], owner[rest]
        v0, v1, v2 = T[:, 0], T[:, 1], T[:, 2]
        m01, m12, m20 = 0.5 * (v0 + v1), 0.5 * (v1 + v2), 0.5 * (v2 + v0)
        T = np.concatenate([np.stack(s, axis=1) for s in
                            ((v0, m01, m20), (m01, v1, m12), (m20, m12, v2), (m01, m12, m20))])
        X = np.tile(X, (4, 1))
        N = np.tile(N, (4, 1))
        owner = np.tile(owner, 4)
        depth += 1
    return out


def element_integral(tri, x, kernel="single", normal=None,
                     quad: ElementQuadrature = DEFAULT_QUADRATURE) -> float:
    """Integral of the single (``kernel="single"``) or double layer kernel
    over one flat triangle, collocated at ``x``."""
    from ..kernel import Layer, get_kernel

    spec = get_kernel(kernel)
    tri = np.asarray(tri, dtype=float).reshape(1, 3, 3)
    if normal is None:
        _, normal = _areas_normals(tri)
    kind = SINGLE if spec.layer is Layer.SINGLE else DOUBLE
    return float(element_integrals(np.asarray(x, float).reshape(1, 3), tri,
                                   np.asarray(normal, float).reshape(1, 3), kind, quad)[0])


def integrate_pairs(x, elements, tris, normals, kind: int = SINGLE,
                    quad: ElementQuadrature = DEFAULT_QUADRATURE,
                    chunk: int = 65536) -> np.ndarray:
    """``int_{tris[elements[p]]} K(x[p], y) dy`` for many pairs, in chunks.

    ``tris`` is the ``(NT, 3, 3)`` vertex array of the whole mesh and
    ``elements`` indexes into it, so large pair lists never copy vertex data
    all at once.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    elements = np.asarray(elements, dtype=np.int64).ravel()
    out = np.empty(len(x))
    for a in range(0, len(x), chunk):
        e = elements[a:a + chunk]
        out[a:a + chunk] = element_integrals(x[a:a + chunk], tris[e], normals[e], kind, quad)
    return out
