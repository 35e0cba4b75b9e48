"""
Hot inner loops: leaf-to-leaf direct sums, sources-to-surface and
surface-to-targets evaluations.

Each routine exists twice, as a numba ``@njit`` kernel and as a pure-numpy
path. The active backend is picked once at import from the environment
variable ``SVDKIFMM_BACKEND`` (``numba`` or ``numpy``; numba is the default
when it imports). Both implementations stay importable through
:func:`get_backend` so they can be compared directly.

Kernel ids follow ``KernelSpec.accel_id``: 0 = Laplace single layer,
1 = Laplace double layer (source normal).
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

INV_4PI = 1.0 / (4.0 * np.pi)

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    # the TBB layer only warns on older system TBB builds; prefer OpenMP
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "omp"
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range


def _requested_backend() -> str:
    name = os.environ.get("SVDKIFMM_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"SVDKIFMM_BACKEND must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


# ---------------------------------------------------------------------------
# numba kernels

@njit(cache=True, inline="always")
def _pair_value(kind, dx, dy, dz, nx, ny, nz):
    r2 = dx * dx + dy * dy + dz * dz
    r = np.sqrt(r2)
    if kind == 0:
        return INV_4PI / r
    return INV_4PI * (dx * nx + dy * ny + dz * nz) / (r2 * r)


@njit(cache=True, parallel=True)
def _near_field_numba(kind, pos, nrm, q, leaf_start, leaf_end, near_ptr, near_idx,
                      exclude_self, tol):
    n = pos.shape[0]
    out = np.zeros(n)
    nleaves = leaf_start.shape[0]
    bad = np.full(nleaves, -1, dtype=np.int64)
    bad_src = np.full(nleaves, -1, dtype=np.int64)
    for b in prange(nleaves):
        for i in range(leaf_start[b], leaf_end[b]):
            xi = pos[i, 0]
            yi = pos[i, 1]
            zi = pos[i, 2]
            acc = 0.0
            for kk in range(near_ptr[b], near_ptr[b + 1]):
                s = near_idx[kk]
                for j in range(leaf_start[s], leaf_end[s]):
                    if exclude_self and j == i:
                        continue
                    dx = xi - pos[j, 0]
                    dy = yi - pos[j, 1]
                    dz = zi - pos[j, 2]
                    if dx * dx + dy * dy + dz * dz <= tol * tol:
                        if bad[b] < 0:
                            bad[b] = i
                            bad_src[b] = j
                        continue
                    acc += q[j] * _pair_value(kind, dx, dy, dz, nrm[j, 0], nrm[j, 1], nrm[j, 2])
            out[i] = acc
    return out, bad, bad_src


@njit(cache=True, parallel=True)
def _sources_to_surface_numba(kind, pos, nrm, q, leaf_start, leaf_end, centers, surf):
    nleaves = leaf_start.shape[0]
    ns = surf.shape[0]
    out = np.zeros((nleaves, ns))
    for b in prange(nleaves):
        for k in range(ns):
            cx = centers[b, 0] + surf[k, 0]
            cy = centers[b, 1] + surf[k, 1]
            cz = centers[b, 2] + surf[k, 2]
            acc = 0.0
            for j in range(leaf_start[b], leaf_end[b]):
                acc += q[j] * _pair_value(kind, cx - pos[j, 0], cy - pos[j, 1], cz - pos[j, 2],
                                          nrm[j, 0], nrm[j, 1], nrm[j, 2])
            out[b, k] = acc
    return out


@njit(cache=True, parallel=True)
def _surface_to_targets_numba(pos, leaf_start, leaf_end, centers, surf, dens):
    n = pos.shape[0]
    out = np.zeros(n)
    nleaves = leaf_start.shape[0]
    ns = surf.shape[0]
    for b in prange(nleaves):
        for i in range(leaf_start[b], leaf_end[b]):
            xi = pos[i, 0] - centers[b, 0]
            yi = pos[i, 1] - centers[b, 1]
            zi = pos[i, 2] - centers[b, 2]
            acc = 0.0
            for k in range(ns):
                dx = xi - surf[k, 0]
                dy = yi - surf[k, 1]
                dz = zi - surf[k, 2]
                acc += dens[b, k] / np.sqrt(dx * dx + dy * dy + dz * dz)
            out[i] = INV_4PI * acc
    return out


# ---------------------------------------------------------------------------
# numpy fallbacks

def _block(kind, targets, sources, normals):
    diff = targets[:, None, :] - sources[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    if kind == 0:
        return INV_4PI / np.sqrt(r2)
    return INV_4PI * np.einsum("ijk,jk->ij", diff, normals) / (r2 * np.sqrt(r2))


def _near_field_numpy(kind, pos, nrm, q, leaf_start, leaf_end, near_ptr, near_idx,
                      exclude_self, tol):
    n = pos.shape[0]
    out = np.zeros(n)
    nleaves = leaf_start.shape[0]
    bad = np.full(nleaves, -1, dtype=np.int64)
    bad_src = np.full(nleaves, -1, dtype=np.int64)
    for b in range(nleaves):
        t0, t1 = leaf_start[b], leaf_end[b]
        if t1 == t0:
            continue
        src = np.concatenate([np.arange(leaf_start[s], leaf_end[s])
                              for s in near_idx[near_ptr[b]:near_ptr[b + 1]]])
        tgt = np.arange(t0, t1)
        diff = pos[tgt][:, None, :] - pos[src][None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        skip = src[None, :] == tgt[:, None] if exclude_self else np.zeros(r2.shape, bool)
        close = (r2 <= tol * tol) & ~skip
        if close.any():
            i, j = np.argwhere(close)[0]
            bad[b], bad_src[b] = tgt[i], src[j]
        r2 = np.where(skip | close, np.inf, r2)
        if kind == 0:
            vals = INV_4PI / np.sqrt(r2)
        else:
            vals = INV_4PI * np.einsum("ijk,jk->ij", diff, nrm[src]) / (r2 * np.sqrt(r2))
        out[tgt] = vals @ q[src]
    return out, bad, bad_src


def _sources_to_surface_numpy(kind, pos, nrm, q, leaf_start, leaf_end, centers, surf):
    nleaves = leaf_start.shape[0]
    out = np.zeros((nleaves, surf.shape[0]))
    for b in range(nleaves):
        s0, s1 = leaf_start[b], leaf_end[b]
        if s1 > s0:
            out[b] = _block(kind, centers[b] + surf, pos[s0:s1], nrm[s0:s1]) @ q[s0:s1]
    return out


def _surface_to_targets_numpy(pos, leaf_start, leaf_end, centers, surf, dens):
    out = np.zeros(pos.shape[0])
    for b in range(leaf_start.shape[0]):
        t0, t1 = leaf_start[b], leaf_end[b]
        if t1 > t0:
            out[t0:t1] = _block(0, pos[t0:t1] - centers[b], surf, None) @ dens[b]
    return out


_BACKENDS = {
    "numba": SimpleNamespace(name="numba", near_field=_near_field_numba,
                             sources_to_surface=_sources_to_surface_numba,
                             surface_to_targets=_surface_to_targets_numba),
    "numpy": SimpleNamespace(name="numpy", near_field=_near_field_numpy,
                             sources_to_surface=_sources_to_surface_numpy,
                             surface_to_targets=_surface_to_targets_numpy),
}


def get_backend(name: str | None = None) -> SimpleNamespace:
    """Return the namespace of hot kernels for ``name`` (default: active)."""
    if name is None:
        name = BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return _BACKENDS[name]


BACKEND = _requested_backend()


def set_backend(name: str) -> None:
    """Switch the backend used by plans created afterwards."""
    global BACKEND
    get_backend(name)
    BACKEND = name


def set_threads(n: int | None) -> None:
    """Cap worker threads for compiled loops and BLAS."""
    if not n:
        return
    if HAVE_NUMBA:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return
    threadpool_limits(int(n))
