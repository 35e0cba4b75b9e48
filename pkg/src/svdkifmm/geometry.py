"""
Test geometries: closed triangle meshes and random point clouds.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .bem.mesh import TriMesh


def _orient_outward(vertices, triangles, inside_point):
    tri = vertices[triangles]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("pk,pk->p", n, tri.mean(axis=1) - inside_point) < 0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, ::-1]
    return triangles


def octahedron(radius: float = 1.0) -> TriMesh:
    """Regular octahedron with vertices on the coordinate axes."""
    v = radius * np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
                          dtype=float)
    t = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                  [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return TriMesh(v, t)


@lru_cache(maxsize=None)
def _icosphere(level: int):
    g = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0), (0, -1, g), (0, 1, g),
         (0, -1, -g), (0, 1, -g), (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    tris = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
            (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
            (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        tris = new
    V = np.array(verts)
    T = _orient_outward(V, np.array(tris, dtype=np.int64), np.zeros(3))
    V.setflags(write=False)
    T.setflags(write=False)
    return V, T


def icosphere(level: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Subdivided icosahedron with ``20 * 4**level`` triangles, vertices on the sphere."""
    if level < 0:
        raise ValueError("level must be >= 0")
    V, T = _icosphere(int(level))
    return TriMesh(radius * V + np.asarray(center, float), T.copy())


def ellipsoid(level: int = 3, axes=(2.0, 1.0, 3.0)) -> TriMesh:
    """Icosphere stretched to the given semi-axes."""
    V, T = _icosphere(int(level))
    return TriMesh(V * np.asarray(axes, float), T.copy())


def box_mesh(n=(5, 5, 10), lengths=(1.0, 1.0, 2.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box with ``n[k]`` subdivisions along axis ``k``.

    Every face quad is split into two triangles, giving
    ``4 * (nx*ny + ny*nz + nx*nz)`` elements.
    """
    n = np.broadcast_to(np.asarray(n, dtype=np.int64), (3,))
    L = np.broadcast_to(np.asarray(lengths, dtype=float), (3,))
    if (n < 1).any() or (L <= 0).any():
        raise ValueError("subdivisions and lengths must be positive")
    center = np.asarray(center, float)
    grids = [np.linspace(-0.5 * L[k], 0.5 * L[k], n[k] + 1) for k in range(3)]
    faces = []
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        A, B = np.meshgrid(grids[a], grids[b], indexing="ij")
        na, nb = n[a] + 1, n[b] + 1
        ii, jj = np.meshgrid(np.arange(n[a]), np.arange(n[b]), indexing="ij")
        v00 = (ii * nb + jj).ravel()
        v10, v01, v11 = v00 + nb, v00 + 1, v00 + nb + 1
        quad_tris = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
        for side in (-0.5, 0.5):
            P = np.zeros((na * nb, 3))
            P[:, a], P[:, b] = A.ravel(), B.ravel()
            P[:, axis] = side * L[axis]
            faces.append((P, quad_tris))
    verts, tris, off = [], [], 0
    for P, T in faces:
        verts.append(P)
        tris.append(T + off)
        off += len(P)
    V = np.concatenate(verts)
    T = np.concatenate(tris)
    # merge the vertices shared by neighbouring faces
    key = np.round(V / L.min() * (4 * n.max()), 6)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    V = V[first]
    T = inverse.ravel()[T]
    T = _orient_outward(V, T, np.zeros(3))
    return TriMesh(V + center, T)


def cube_mesh(n: int = 10, length: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Cube with ``n x n`` quads per face (``12 n**2`` triangles)."""
    return box_mesh((n, n, n), (length, length, length), center)


def sphere_points(N: int, seed: int = 0, radius: float = 1.0) -> np.ndarray:
    """``N`` uniform random points on a sphere surface."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((N, 3))
    return radius * x / np.linalg.norm(x, axis=1)[:, None]


def cube_points(N: int, seed: int = 0) -> np.ndarray:
    """``N`` uniform random points in the unit cube ``[0, 1)^3``."""
    return np.random.default_rng(seed).random((N, 3))


GEOMETRIES = {
    "sphere-points": sphere_points,
    "cube-points": cube_points,
}
