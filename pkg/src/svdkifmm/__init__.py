"""Kernel-independent fast multipole method with SVD-compressed M2L and a Laplace BEM."""
from .compression import build_operator_set, compression_report, epsilon1, epsilon2
from .engine import FmmConfig, FmmPlan, plan, plan_bem, plan_particles
from .kernel import LAPLACE_DOUBLE, LAPLACE_SINGLE, CoincidentPointsError, get_kernel
from .octree import Octree, build_tree
from .solver import IterationStats, gmres
from .surfaces import ConfigError, SurfaceSpec

__version__ = "0.1.0"

__all__ = [
    "CoincidentPointsError", "ConfigError", "FmmConfig", "FmmPlan", "IterationStats",
    "LAPLACE_DOUBLE", "LAPLACE_SINGLE", "Octree", "SurfaceSpec", "build_operator_set",
    "build_tree", "compression_report", "epsilon1", "epsilon2", "get_kernel", "gmres",
    "plan", "plan_bem", "plan_particles",
]
