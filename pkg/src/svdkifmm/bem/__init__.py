"""Piecewise-constant collocation BEM for the Laplace equation."""
from .mesh import (BoundaryCondition, BoundaryConditionError, MeshError, TriMesh, load_bc_csv,
                   load_mesh, save_bc_csv, save_mesh)
from .system import (BemSolution, FormulationError, assemble_dirichlet_system,
                     assemble_mixed_system, solve_dirichlet, solve_mixed)

__all__ = [
    "BemSolution", "BoundaryCondition", "BoundaryConditionError", "FormulationError",
    "MeshError", "TriMesh", "assemble_dirichlet_system", "assemble_mixed_system",
    "load_bc_csv", "load_mesh", "save_bc_csv", "save_mesh", "solve_dirichlet", "solve_mixed",
]
