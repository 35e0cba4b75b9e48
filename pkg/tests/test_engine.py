import numpy as np
import pytest

from svdkifmm import _accel
from svdkifmm.engine import FmmConfig, plan, plan_bem, plan_particles
from svdkifmm.geometry import box_mesh, cube_mesh, cube_points, icosphere, sphere_points
from svdkifmm.kernel import CoincidentPointsError, kernel_matrix
from svdkifmm.oracle import dense_bem_matrix, direct_sum, relative_l2, self_term_single
from svdkifmm.surfaces import ConfigError, SurfaceRole, unit_surface

# error <= C_ORACLE * L * eps1; calibrated once on uniform cube clouds with
# 15 random density draws (worst ratio 2.26) and frozen
C_ORACLE = 3.0


@pytest.fixture(scope="module")
def plan1k():
    return plan_particles(cube_points(1000, seed=5))


def test_plan_defaults(plan1k):
    assert plan1k.depth >= 2
    assert plan1k.tree.leaf_sizes().max() <= 100
    assert plan1k.mode == "particle"
    assert plan1k.epsilon1 == pytest.approx(0.1 * 2.0**-plan1k.depth / plan1k.depth)


def test_config_validation():
    for bad in (dict(p=1), dict(C1=0), dict(C2=-1), dict(d_particle=0.7), dict(m2l="fft"),
                dict(eps1=2.0), dict(s_max=0)):
        with pytest.raises(ConfigError):
            FmmConfig(**bad)


def test_determinism(rng):
    x = cube_points(3000, seed=2)
    q = rng.standard_normal(3000)
    a, b = plan_particles(x), plan_particles(x)
    ua, ub = a.operators.ops(a.depth), b.operators.ops(b.depth)
    assert np.array_equal(ua.s2m, ub.s2m) and np.array_equal(ua.m2m, ub.m2m)
    assert all(np.array_equal(ua.m2l.matrix(o), ub.m2l.matrix(o)) for o in range(316))
    assert np.array_equal(a.apply(q), a.apply(q))
    assert np.array_equal(a.apply(q), b.apply(q))


def test_two_points_same_leaf():
    # the third point only stretches the root box so the pair shares a leaf
    x = np.array([[0.0, 0, 0], [0.01, 0, 0], [1.0, 1.0, 1.0]])
    p = plan_particles(x, FmmConfig(s_max=2))
    q = np.array([1.0, 2.0, 0.0])
    out = p.apply(q)
    assert np.allclose(out[:2], direct_sum(x, q)[:2], rtol=1e-14)


def test_linearity(plan1k, rng):
    q1, q2 = rng.standard_normal((2, 1000))
    a, b = 0.7, -2.3
    lhs = plan1k.apply(a * q1 + b * q2)
    rhs = a * plan1k.apply(q1) + b * plan1k.apply(q2)
    assert relative_l2(lhs, rhs) <= 1e-12
    assert np.all(plan1k.apply(np.zeros(1000)) == 0)
    with pytest.raises(ValueError):
        plan1k.apply(np.ones(999))


def test_oracle_error_bound(rng):
    for n, seed in ((1000, 1), (4096, 2), (8192, 3)):
        x = cube_points(n, seed=seed)
        q = rng.standard_normal(n)
        p = plan_particles(x)
        err = relative_l2(p.apply(q), direct_sum(x, q))
        assert err <= C_ORACLE * p.depth * p.epsilon1


def test_error_monotone_in_p(rng):
    x = cube_points(4096, seed=1)
    q = rng.standard_normal(4096)
    ref = direct_sum(x, q)
    errs = [relative_l2(plan_particles(x, FmmConfig(p=p)).apply(q), ref) for p in (4, 6, 8)]
    assert errs[2] <= errs[1] <= errs[0]


def test_uncompressed_accuracy(rng):
    x = cube_points(4096, seed=1)
    q = rng.standard_normal(4096)
    ref = direct_sum(x, q)
    assert relative_l2(plan_particles(x, FmmConfig(m2l="dense")).apply(q), ref) <= 1e-5
    assert relative_l2(plan_particles(x, FmmConfig(p=8, m2l="dense")).apply(q), ref) <= 1e-6


def test_upward_zero_and_far_reproduction(rng):
    x = cube_points(800, seed=4)
    q = np.zeros(800)
    p = plan_particles(x, FmmConfig(p=8, m2l="dense"))
    up = p.upward_pass(q)
    assert all(np.all(v == 0) for v in up.values())
    q[17] = 1.0
    up = p.upward_pass(q)
    t = p.tree
    k = t.levels[2].find(t.levels[2].coords)[t.levels[2].find(
        [np.floor((x[17] - t.root_center + t.root_halfwidth) / (2 * t.halfwidth(2)))])[0]]
    center = t.centers(2)[k]
    hw = t.halfwidth(2)
    equiv = center + p.spec.factor(SurfaceRole.UPWARD_EQUIVALENT) * hw * unit_surface(8)
    probes = center + 3.5 * hw * np.array(
        [[1, 0, 0], [0, 1, 0], [0, 0, -1], [1, 1, 1], [-1, 0.5, 0], [0, -1, 0.2],
         [0.3, 0.3, -1], [-1, -1, -1], [1, -1, 0], [0, 0, 1]]) / 1.0
    probes = center + (probes - center) / np.abs(probes - center).max(axis=1, keepdims=True) * 3.5 * hw
    got = kernel_matrix(probes, equiv) @ up[2][k]
    want = kernel_matrix(probes, x[17:18])[:, 0]
    assert relative_l2(got, want) <= 1e-5


def test_upward_permutation_invariant(rng):
    x = cube_points(1500, seed=8)
    q = rng.standard_normal(1500)
    perm = rng.permutation(1500)
    a = plan_particles(x).upward_pass(q)
    b = plan_particles(x[perm]).upward_pass(q[perm])
    for lev in a:
        assert np.allclose(a[lev], b[lev], rtol=0, atol=1e-12 * np.abs(a[lev]).max())


def test_no_far_field_when_everything_is_near(rng):
    x = rng.uniform(0, 1, (300, 3))
    p = plan_particles(x, FmmConfig(pad=1.5, s_max=300))
    q = rng.standard_normal(300)
    assert all(len(p.tree.interactions[lev]) == 0 for lev in range(p.depth + 1))
    far = p.apply(q) - p.near_pass(q)
    assert np.all(far == 0)
    assert np.allclose(p.near_pass(q), direct_sum(x, q), rtol=1e-13)


def test_two_clusters_far_field(rng):
    a = rng.uniform(0, 0.2, (500, 3))
    b = rng.uniform(0, 0.2, (500, 3)) + 0.8
    x = np.vstack([a, b])
    q = np.r_[np.zeros(500), rng.standard_normal(500)]
    p = plan_particles(x, FmmConfig(p=6))
    assert np.all(p.near_pass(q)[:500] == 0)
    assert relative_l2(p.apply(q)[:500], direct_sum(x, q)[:500]) <= 1e-3


def test_scaling_homogeneity(rng):
    x = cube_points(2000, seed=9)
    q = rng.standard_normal(2000)
    p1 = plan_particles(x)
    p2 = plan_particles(3.0 * x)
    far1 = p1.apply(q) - p1.near_pass(q)
    far2 = p2.apply(q) - p2.near_pass(q)
    assert relative_l2(far2, far1 / 3.0) <= 1e-10


def test_near_plus_far_is_apply(plan1k, rng):
    q = rng.standard_normal(1000)
    far = plan1k.downward_pass(plan1k.upward_pass(q))
    assert np.array_equal(plan1k.near_pass(q) + far, plan1k.apply(q))


def test_coincident_particles_named():
    x = cube_points(500, seed=1)
    x[321] = x[12]
    p = plan_particles(x)
    with pytest.raises(CoincidentPointsError) as exc:
        p.apply(np.ones(500))
    assert sorted(exc.value.pair) == [12, 321]


def test_double_layer_particles(rng):
    x = sphere_points(3000, seed=2)
    nrm = x.copy()
    q = rng.standard_normal(3000)
    p = plan_particles(x, FmmConfig(m2l="dense"), "double", nrm)
    assert relative_l2(p.apply(q), direct_sum(x, q, "double", nrm)) <= 1e-4
    with pytest.raises(ValueError):
        plan_particles(x, None, "double")


def test_backends_agree(rng, monkeypatch):
    x = cube_points(3000, seed=6)
    q = rng.standard_normal(3000)
    monkeypatch.setattr(_accel, "BACKEND", "numpy")
    pn = plan_particles(x)
    monkeypatch.setattr(_accel, "BACKEND", "numba")
    pj = plan_particles(x)
    assert (pn.backend, pj.backend) == ("numpy", "numba")
    assert relative_l2(pn.apply(q), pj.apply(q)) <= 1e-12
    nrm = sphere_points(3000, seed=1)
    monkeypatch.setattr(_accel, "BACKEND", "numpy")
    dn = plan_particles(x, None, "double", nrm)
    monkeypatch.setattr(_accel, "BACKEND", "numba")
    dj = plan_particles(x, None, "double", nrm)
    assert relative_l2(dn.apply(q), dj.apply(q)) <= 1e-12


def test_backend_env_validation():
    with pytest.raises(ValueError):
        _accel.get_backend("fortran")


def test_bem_enclosure_and_offset():
    for mesh in (icosphere(3), box_mesh(), cube_mesh(10)):
        p = plan_bem(mesh)
        assert p.enclosure_margin() > 0
        assert p.spec.d >= 0.05
    strict = FmmConfig(bem_expand_offset=False)
    with pytest.raises(ConfigError, match="increase C_d"):
        plan_bem(icosphere(3), strict)


def test_bem_near_self_terms():
    mesh = cube_mesh(4)
    p = plan_bem(mesh)
    diag = p.near_matrix.diagonal()
    sorted_self = [self_term_single(mesh.element_vertices[i]) for i in p.tree.order[:5]]
    assert np.allclose(diag[:5], sorted_self, rtol=1e-6)


def test_bem_uncompressed_matches_dense(rng):
    mesh = icosphere(3)
    q = rng.standard_normal(mesh.n_elements)
    for kernel in ("single", "double"):
        p = plan_bem(mesh, FmmConfig(p=8, m2l="dense"), kernel)
        A = dense_bem_matrix(mesh, kernel)
        assert relative_l2(p.apply(q), A @ q) <= 1e-4


def test_with_kernel_shares_operators():
    p = plan_bem(icosphere(3))
    d = p.with_kernel("double")
    assert d.operators is p.operators and d.tree is p.tree
    assert d.kernel.name == "laplace-double"


def test_plan_dispatch():
    assert plan(icosphere(3)).mode == "bem"
    assert plan(cube_points(50)).mode == "particle"


def test_timings_and_memory(plan1k, rng):
    out, t = plan1k.apply_timed(rng.standard_normal(1000))
    assert set(t) >= {"upward", "m2l", "downward", "near", "total"}
    assert all(v >= 0 for v in t.values())
    assert plan1k.memory_bytes() > 0


def test_two_clusters_far_field_uncompressed(rng):
    a = rng.uniform(0, 0.2, (500, 3))
    b = rng.uniform(0, 0.2, (500, 3)) + 0.8
    x = np.vstack([a, b])
    q = np.r_[np.zeros(500), rng.standard_normal(500)]
    p = plan_particles(x, FmmConfig(p=6, m2l="dense"))
    assert relative_l2(p.apply(q)[:500], direct_sum(x, q)[:500]) <= 1e-3
