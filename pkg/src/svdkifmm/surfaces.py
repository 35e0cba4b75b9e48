"""
Equivalent and check surfaces: cube boundaries sampled on a p-per-edge grid.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

D_MAX = 2.0 / 3.0


class ConfigError(ValueError):
    """Invalid FMM configuration value."""


class SurfaceRole(enum.Enum):
    UPWARD_EQUIVALENT = "upward_equivalent"
    UPWARD_CHECK = "upward_check"
    DOWNWARD_EQUIVALENT = "downward_equivalent"
    DOWNWARD_CHECK = "downward_check"


@dataclass(frozen=True)
class SurfaceSpec:
    p: int
    d: float

    def __post_init__(self):
        if int(self.p) < 2:
            raise ConfigError(f"p must be >= 2, got {self.p}")
        if not 0.0 <= self.d < D_MAX:
            raise ConfigError(f"surface offset d must lie in [0, 2/3), got {self.d}")

    @property
    def n_points(self) -> int:
        return 6 * (self.p - 1) ** 2 + 2

    def factor(self, role: SurfaceRole) -> float:
        """Halfwidth of the role's surface relative to the cube halfwidth."""
        if role in (SurfaceRole.UPWARD_EQUIVALENT, SurfaceRole.DOWNWARD_CHECK):
            return 1.0 + self.d
        return 3.0 - 2.0 * self.d


@dataclass(frozen=True)
class SurfaceCloud:
    points: np.ndarray
    role: SurfaceRole | None
    owner_center: np.ndarray
    owner_halfwidth: float  # halfwidth of the sampled surface itself


@lru_cache(maxsize=None)
def _unit_surface(p: int) -> np.ndarray:
    g = np.linspace(-1.0, 1.0, p)
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    on_boundary = (np.abs(grid) == 1.0).any(axis=1)
    pts = grid[on_boundary]
    pts.setflags(write=False)
    return pts


def unit_surface(p: int) -> np.ndarray:
    """Boundary points of the p-per-edge grid on ``[-1, 1]^3``, lexicographic."""
    if int(p) < 2:
        raise ConfigError(f"p must be >= 2, got {p}")
    return _unit_surface(int(p))


def sample_cube_surface(center, halfwidth: float, p: int,
                        role: SurfaceRole | None = None) -> SurfaceCloud:
    """Sample the boundary of the cube ``center +- halfwidth``."""
    if not halfwidth > 0:
        raise ConfigError(f"halfwidth must be positive, got {halfwidth}")
    center = np.asarray(center, dtype=float).reshape(3)
    pts = center + halfwidth * unit_surface(p)
    return SurfaceCloud(pts, role, center, float(halfwidth))


def surface_halfwidths(r: float, d: float) -> tuple[float, float]:
    """(inner, outer) surface halfwidths ``((1+d) r, (3-2d) r)``.

    The inner one carries the upward-equivalent and downward-check points,
    the outer one the upward-check and downward-equivalent points.
    """
    if not 0.0 <= d < D_MAX:
        raise ConfigError(f"surface offset d must lie in [0, 2/3), got {d}")
    return (1.0 + d) * r, (3.0 - 2.0 * d) * r


def surface_for(center, cube_halfwidth: float, spec: SurfaceSpec,
                role: SurfaceRole) -> SurfaceCloud:
    hw = spec.factor(role) * cube_halfwidth
    return sample_cube_surface(center, hw, spec.p, role)


def bem_offset(s_max: int, C_d: float) -> float:
    """Relative surface offset for boundary elements, ``C_d / sqrt(s_max)``."""
    if s_max < 1:
        raise ConfigError("s_max must be >= 1")
    if not C_d > 0:
        raise ConfigError("C_d must be positive")
    d = C_d / math.sqrt(s_max)
    if d >= D_MAX:
        raise ConfigError(f"C_d/sqrt(s_max) = {d:.4g} >= 2/3; increase s_max or reduce C_d")
    return d
