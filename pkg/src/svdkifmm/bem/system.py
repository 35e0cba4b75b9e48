"""
Matrix-free collocation systems for the Laplace equation on closed meshes.

Two formulations are provided, both with piecewise-constant unknowns
collocated at element centroids:

* the first-kind Dirichlet problem ``S q = f`` (single layer only);
* the direct interior formulation with mixed data,
  ``u/2 + K u = S q`` where ``K`` is the double layer with the normal
  derivative taken at the source. On Dirichlet elements ``q`` is unknown,
  on Neumann elements ``u`` is.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator

from ..solver import IterationStats, gmres
from .mesh import BoundaryCondition, TriMesh


class FormulationError(ValueError):
    pass


@dataclass
class BemSystem:
    """Linear system ``operator x = rhs`` plus the map back to traces."""

    operator: LinearOperator
    rhs: np.ndarray
    kind: str
    recover: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass
class BemSolution:
    u: np.ndarray  # potential per element
    q: np.ndarray  # normal flux (Dirichlet path: single-layer density)
    stats: IterationStats
    kind: str
    plans: tuple = field(default=(), repr=False)


def _check_plan(plan, mesh: TriMesh, layer: str):
    if plan.mode != "bem":
        raise FormulationError("BEM systems need a plan built with plan_bem")
    if plan.n != mesh.n_elements:
        raise FormulationError(f"plan has {plan.n} elements, mesh has {mesh.n_elements}")
    if plan.kernel.layer.value != layer:
        raise FormulationError(f"expected a {layer}-layer plan, got {plan.kernel.name}")


def assemble_dirichlet_system(mesh: TriMesh, f, plan) -> BemSystem:
    """``S q = f``: single-layer density for prescribed potentials ``f``.

    ``f`` may be an array of per-element potentials or a
    :class:`BoundaryCondition` that must be all-Dirichlet.
    """
    if isinstance(f, BoundaryCondition):
        if not f.all_dirichlet:
            raise FormulationError("boundary condition has Neumann elements; use "
                                   "assemble_mixed_system")
        f = f.values
    f = np.asarray(f, dtype=float).ravel()
    if len(f) != mesh.n_elements:
        raise FormulationError(f"{len(f)} values for {mesh.n_elements} elements")
    _check_plan(plan, mesh, "single")
    n = mesh.n_elements
    op = LinearOperator((n, n), matvec=plan.apply, dtype=float)
    return BemSystem(op, f.copy(), "dirichlet", lambda x: (f.copy(), np.asarray(x).copy()))


def assemble_mixed_system(mesh: TriMesh, bc: BoundaryCondition, plan_single,
                          plan_double) -> BemSystem:
    """Direct formulation ``u/2 + K u = S q`` with the unknown per element
    being ``q`` (Dirichlet elements) or ``u`` (Neumann elements).

    The system is ``S x_D - (I/2 + K) x_N = (I/2 + K) u_D - S q_N``.
    """
    if not mesh.is_closed():
        raise FormulationError("the direct formulation needs a closed mesh")
    if len(bc) != mesh.n_elements:
        raise FormulationError(f"{len(bc)} conditions for {mesh.n_elements} elements")
    _check_plan(plan_single, mesh, "single")
    _check_plan(plan_double, mesh, "double")
    dmask = bc.dirichlet
    n = mesh.n_elements

    def half_plus_K(v):
        return 0.5 * v + plan_double.apply(v)

    def matvec(x):
        x = np.asarray(x, dtype=float).ravel()
        xd = np.where(dmask, x, 0.0)
        xn = np.where(dmask, 0.0, x)
        return plan_single.apply(xd) - half_plus_K(xn)

    ud = np.where(dmask, bc.values, 0.0)
    qn = np.where(dmask, 0.0, bc.values)
    rhs = half_plus_K(ud) - plan_single.apply(qn)

    def recover(x):
        x = np.asarray(x, dtype=float).ravel()
        return np.where(dmask, bc.values, x), np.where(dmask, x, bc.values)

    return BemSystem(LinearOperator((n, n), matvec=matvec, dtype=float), rhs, "mixed", recover)


def solve_system(system: BemSystem, tol: float = 1e-6, restart: int = 50,
                 max_iter: int = 1000, x0=None):
    x, stats = gmres(system.operator, system.rhs, tol=tol, restart=restart,
                     max_iter=max_iter, x0=x0)
    u, q = system.recover(x)
    return u, q, stats


def solve_dirichlet(mesh: TriMesh, f, config=None, tol: float = 1e-6, restart: int = 50,
                    max_iter: int = 1000, plan=None) -> BemSolution:
    """Build a single-layer plan (unless given) and solve ``S q = f``."""
    from ..engine import plan_bem

    plan = plan or plan_bem(mesh, config, "single")
    u, q, stats = solve_system(assemble_dirichlet_system(mesh, f, plan), tol, restart, max_iter)
    return BemSolution(u, q, stats, "dirichlet", (plan,))


def solve_mixed(mesh: TriMesh, bc: BoundaryCondition, config=None, tol: float = 1e-6,
                restart: int = 50, max_iter: int = 1000, plans=None) -> BemSolution:
    """Solve the direct mixed problem; the double-layer plan shares the
    single-layer plan's tree and operators."""
    from ..engine import plan_bem

    if plans is None:
        ps = plan_bem(mesh, config, "single")
        plans = (ps, ps.with_kernel("double"))
    system = assemble_mixed_system(mesh, bc, *plans)
    u, q, stats = solve_system(system, tol, restart, max_iter)
    return BemSolution(u, q, stats, "mixed", tuple(plans))


def single_layer_potential(mesh: TriMesh, q, points, quad=None) -> np.ndarray:
    """``sum_j q_j int_{T_j} G(x, y) dy`` at arbitrary ``points`` (direct sum)."""
    from .quadrature import DEFAULT_QUADRATURE, SINGLE, integrate_pairs

    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = mesh.n_elements
    x = np.repeat(points, n, axis=0)
    elem = np.tile(np.arange(n), len(points))
    vals = integrate_pairs(x, elem, mesh.element_vertices, mesh.normals, SINGLE,
                           quad or DEFAULT_QUADRATURE)
    return vals.reshape(len(points), n) @ np.asarray(q, float)


def harmonic_point_source(x0):
    """``u = 1/|x - x0|`` and its gradient, a harmonic field away from ``x0``."""
    x0 = np.asarray(x0, dtype=float)

    def u(x):
        return 1.0 / np.linalg.norm(np.asarray(x) - x0, axis=-1)

    def grad(x):
        d = np.asarray(x) - x0
        return -d / np.linalg.norm(d, axis=-1, keepdims=True) ** 3

    return u, grad


def traces(mesh: TriMesh, u, grad) -> tuple[np.ndarray, np.ndarray]:
    """Potential and outward normal flux of a field at the element centroids."""
    c = mesh.centroids
    return u(c), np.einsum("pk,pk->p", grad(c), mesh.normals)
