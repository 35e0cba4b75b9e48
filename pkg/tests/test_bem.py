import numpy as np
import pytest

from svdkifmm.bem import (BoundaryCondition, FormulationError, TriMesh,
                          assemble_dirichlet_system, assemble_mixed_system, solve_dirichlet,
                          solve_mixed)
from svdkifmm.bem.system import harmonic_point_source, single_layer_potential, traces
from svdkifmm.engine import FmmConfig, plan_bem
from svdkifmm.geometry import icosphere
from svdkifmm.kernel import kernel_matrix
from svdkifmm.oracle import dense_bem_solve, relative_l2
from svdkifmm.surfaces import SurfaceRole, unit_surface


# shallow trees get a loose default eps1 (0.0125 at depth 2); the accuracy
# checks below pin a tight threshold instead
TIGHT = FmmConfig(eps1=1e-5)


@pytest.fixture(scope="module")
def sphere_plans(sphere1280):
    ps = plan_bem(sphere1280, TIGHT)
    return ps, ps.with_kernel("double")


def test_zero_data_gives_zero_density(sphere1280, sphere_plans):
    sol = solve_dirichlet(sphere1280, np.zeros(1280), plan=sphere_plans[0])
    assert np.all(sol.q == 0)
    assert sol.stats.iterations <= 1 and sol.stats.converged


def test_sphere_capacitance(sphere1280, sphere_plans):
    # unit potential on the unit sphere: density 1, total charge 4 pi
    sol = solve_dirichlet(sphere1280, np.ones(1280), plan=sphere_plans[0])
    assert sol.stats.converged and sol.stats.iterations <= 500
    total = float(sol.q @ sphere1280.areas)
    assert total == pytest.approx(4 * np.pi, rel=2e-2)


def test_constant_potential_has_zero_flux(sphere1280, sphere_plans):
    bc = BoundaryCondition(np.ones(1280, bool), np.ones(1280))
    area = sphere1280.total_area
    _, q_dense = dense_bem_solve(sphere1280, bc, "mixed")
    assert abs(float(q_dense @ sphere1280.areas)) <= 1e-4 * area
    sol = solve_mixed(sphere1280, bc, tol=1e-8, plans=sphere_plans)
    assert abs(float(sol.q @ sphere1280.areas)) <= 1e-4 * area


def test_mixed_all_dirichlet_consistent(sphere1280, sphere_plans):
    # all-Dirichlet mixed system is S q = (I/2 + K) f: the first-kind solve with
    # that right-hand side must give the same flux
    ps, pd = sphere_plans
    u, grad = harmonic_point_source([2.0, 0.3, -0.4])
    f, _ = traces(sphere1280, u, grad)
    bc = BoundaryCondition(np.ones(1280, bool), f)
    mixed = solve_mixed(sphere1280, bc, tol=1e-10, plans=sphere_plans)
    rhs = 0.5 * f + pd.apply(f)
    first = solve_dirichlet(sphere1280, rhs, tol=1e-10, plan=ps)
    assert relative_l2(mixed.q, first.q) <= 1e-6
    assert np.array_equal(mixed.u, f)


def test_mixed_recovers_point_source_flux(sphere1280, sphere_plans):
    u, grad = harmonic_point_source([2.0, 0.3, -0.4])
    uu, qq = traces(sphere1280, u, grad)
    dmask = sphere1280.centroids[:, 2] > 0
    sol = solve_mixed(sphere1280, BoundaryCondition.from_traces(dmask, uu, qq),
                      plans=sphere_plans)
    assert sol.stats.converged
    assert relative_l2(sol.u, uu) <= 2e-3
    assert relative_l2(sol.q, qq) <= 2e-2
    u_dense, q_dense = dense_bem_solve(sphere1280, BoundaryCondition.from_traces(dmask, uu, qq),
                                       "mixed")
    assert relative_l2(sol.q, q_dense) <= 2e-3
    assert np.array_equal(sol.u[dmask], uu[dmask]) and np.array_equal(sol.q[~dmask], qq[~dmask])


def test_fmm_solution_close_to_dense(sphere1280):
    f = sphere1280.centroids[:, 0] ** 2
    _, q_dense = dense_bem_solve(sphere1280, f)
    sol = solve_dirichlet(sphere1280, f, FmmConfig(m2l="dense"), tol=1e-10)
    assert relative_l2(sol.q, q_dense) <= 1e-4


def test_interior_potential_converges():
    x0 = np.array([1.8, 0.4, 0.2])
    u, grad = harmonic_point_source(x0)
    probes = np.array([[0.0, 0, 0], [0.3, 0.1, -0.2], [-0.4, 0.2, 0.1], [0.1, -0.5, 0.3]])
    errs = []
    for level in (3, 4, 5):
        mesh = icosphere(level)
        f, _ = traces(mesh, u, grad)
        sol = solve_dirichlet(mesh, f, tol=1e-8)
        assert sol.stats.converged
        errs.append(relative_l2(single_layer_potential(mesh, sol.q, probes), u(probes)))
    assert errs[2] < errs[1] < errs[0]


def test_s2m_reproduces_leaf_field(sphere1280, rng):
    p = plan_bem(sphere1280, FmmConfig(p=8, m2l="dense"))
    q = rng.standard_normal(1280)
    t = p.tree
    L = t.depth
    up = (p.s2m_matrix @ q[t.order]).reshape(len(t.leaf_start), -1)
    leaf = int(np.argmax(t.leaf_sizes()))
    center, hw = t.centers(L)[leaf], t.halfwidth(L)
    elems = t.order[t.leaf_start[leaf]:t.leaf_end[leaf]]
    equiv = center + p.spec.factor(SurfaceRole.UPWARD_EQUIVALENT) * hw * unit_surface(8)
    probes = center + 4.0 * hw * unit_surface(3)
    got = kernel_matrix(probes, equiv) @ up[leaf]
    sub = TriMesh(sphere1280.vertices, sphere1280.triangles[elems], validate=False)
    want = single_layer_potential(sub, q[elems], probes)
    assert relative_l2(got, want) <= 1e-5


def test_open_mesh_rejected(sphere1280):
    tri = sphere1280.triangles[:-1]
    opened = TriMesh(sphere1280.vertices, tri, validate=False)
    ps = plan_bem(opened)
    bc = BoundaryCondition.dirichlet_const(len(tri), 1.0)
    with pytest.raises(FormulationError, match="closed"):
        assemble_mixed_system(opened, bc, ps, ps.with_kernel("double"))


def test_dirichlet_assembler_rejects_neumann(sphere1280, sphere_plans):
    bc = BoundaryCondition(np.r_[np.ones(1279, bool), False], np.ones(1280))
    with pytest.raises(FormulationError, match="Neumann"):
        assemble_dirichlet_system(sphere1280, bc, sphere_plans[0])


def test_plan_kind_checks(sphere1280, sphere_plans):
    ps, pd = sphere_plans
    with pytest.raises(FormulationError):
        assemble_dirichlet_system(sphere1280, np.ones(1280), pd)
    with pytest.raises(FormulationError):
        assemble_dirichlet_system(sphere1280, np.ones(10), ps)
    bc = BoundaryCondition.dirichlet_const(1280, 1.0)
    with pytest.raises(FormulationError):
        assemble_mixed_system(sphere1280, bc, pd, ps)
