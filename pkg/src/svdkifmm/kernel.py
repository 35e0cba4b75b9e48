"""
Laplace single- and double-layer kernels.

Kernels are registered behind one evaluation signature,
``evaluate(targets, sources, normals) -> matrix``, so the FMM engine never
branches on a particular kernel. Only the Laplace pair is shipped.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

INV_4PI = 1.0 / (4.0 * np.pi)

#: pairs closer than this fraction of the scene diameter count as coincident
COINCIDENCE_RTOL = 1e-14


class CoincidentPointsError(ValueError):
    """Raised when a kernel is evaluated at (numerically) coincident points."""

    def __init__(self, message: str, pair: Optional[tuple[int, int]] = None):
        super().__init__(message)
        self.pair = pair


class Layer(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"


@dataclass(frozen=True)
class KernelSpec:
    """Description of a registered kernel.

    Attributes
    ----------
    name : str
        Registry key.
    layer : Layer
        Single or double layer.
    homogeneity_degree : int or None
        ``m`` such that ``G(ax, ay) = a**m G(x, y)``; ``None`` marks a
        kernel that must be treated as non-homogeneous (per-level operators).
    symmetric : bool
        True iff ``G(x, y) == G(y, x)``.
    evaluate : callable
        ``evaluate(targets, sources, normals)`` returning the dense
        ``(n_targets, n_sources)`` matrix. ``normals`` are source normals.
    accel_id : int
        Identifier of the compiled inner loop (-1 if none exists).
    surface_kernel : str or None
        Kernel used between equivalent and check surfaces when this one only
        describes the sources (the double layer uses the single layer there).
    """

    name: str
    layer: Layer
    homogeneity_degree: Optional[int]
    symmetric: bool
    evaluate: Callable[..., np.ndarray]
    accel_id: int = -1
    surface_kernel: Optional[str] = None

    @property
    def needs_normals(self) -> bool:
        return self.layer is Layer.DOUBLE

    def __hash__(self):
        return hash((self.name, self.layer, self.homogeneity_degree))

    def __eq__(self, other):
        if not isinstance(other, KernelSpec):
            return NotImplemented
        return (self.name, self.layer, self.homogeneity_degree) == (
            other.name, other.layer, other.homogeneity_degree)


def _scene_diameter(*clouds: np.ndarray) -> float:
    pts = np.concatenate([c.reshape(-1, 3) for c in clouds], axis=0)
    if len(pts) == 0:
        return 0.0
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def _distances(targets: np.ndarray, sources: np.ndarray):
    diff = targets[:, None, :] - sources[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    tol = COINCIDENCE_RTOL * _scene_diameter(targets, sources)
    bad = r <= tol
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise CoincidentPointsError(
            f"coincident target {i} and source {j} (distance {r[i, j]:.3e})",
            pair=(int(i), int(j)))
    return diff, r


def _laplace_single(targets, sources, normals=None):
    _, r = _distances(targets, sources)
    return INV_4PI / r


def _laplace_double(targets, sources, normals):
    if normals is None:
        raise ValueError("double-layer kernel requires source normals")
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    diff, r = _distances(targets, sources)
    num = np.einsum("ijk,jk->ij", diff, normals)
    return INV_4PI * num / r**3


LAPLACE_SINGLE = KernelSpec("laplace-single", Layer.SINGLE, -1, True,
                            _laplace_single, accel_id=0)
LAPLACE_DOUBLE = KernelSpec("laplace-double", Layer.DOUBLE, -2, False,
                            _laplace_double, accel_id=1,
                            surface_kernel="laplace-single")

_REGISTRY: dict[str, KernelSpec] = {}


def register_kernel(spec: KernelSpec) -> KernelSpec:
    if spec.layer is Layer.SINGLE and spec.homogeneity_degree not in (None, -1):
        raise ValueError("single-layer Laplace-type kernels are homogeneous of degree -1")
    _REGISTRY[spec.name] = spec
    return spec


def get_kernel(name_or_spec) -> KernelSpec:
    if isinstance(name_or_spec, KernelSpec):
        return name_or_spec
    key = str(name_or_spec).lower()
    aliases = {"single": "laplace-single", "double": "laplace-double"}
    key = aliases.get(key, key)
    try:
        return _REGISTRY[key]
    except KeyError:
        raise KeyError(f"unknown kernel {name_or_spec!r}; "
                       f"registered: {sorted(_REGISTRY)}") from None


register_kernel(LAPLACE_SINGLE)
register_kernel(LAPLACE_DOUBLE)


def translation_kernel(spec) -> KernelSpec:
    """Kernel used by every surface-to-surface translation for ``spec``."""
    spec = get_kernel(spec)
    return get_kernel(spec.surface_kernel) if spec.surface_kernel else spec


def _check_pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = float(np.linalg.norm(x - y))
    scale = max(float(np.abs(x).max()), float(np.abs(y).max()))
    if r <= COINCIDENCE_RTOL * scale or r == 0.0:
        raise CoincidentPointsError(f"coincident points {x} and {y}")
    return x, y, r


def eval_single(x, y) -> float:
    """``1 / (4 pi |x - y|)``."""
    _, _, r = _check_pair(x, y)
    return INV_4PI / r


def eval_double(x, y, n_y) -> float:
    """Normal derivative of the single layer at the source,
    ``(x - y) . n_y / (4 pi |x - y|**3)``."""
    x, y, r = _check_pair(x, y)
    n_y = np.asarray(n_y, dtype=float)
    if abs(np.linalg.norm(n_y) - 1.0) > 1e-12:
        raise ValueError(f"source normal must be a unit vector, got |n|={np.linalg.norm(n_y)}")
    return INV_4PI * float(np.dot(x - y, n_y)) / r**3


def kernel_matrix(targets, sources, spec=LAPLACE_SINGLE, normals=None) -> np.ndarray:
    """Dense kernel matrix, entry ``(i, j) = G(targets[i], sources[j])``.

    Raises
    ------
    CoincidentPointsError
        If any target/source pair coincides; ``err.pair`` holds ``(i, j)``.
    """
    spec = get_kernel(spec)
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    sources = np.asarray(sources, dtype=float).reshape(-1, 3)
    return spec.evaluate(targets, sources, normals)
