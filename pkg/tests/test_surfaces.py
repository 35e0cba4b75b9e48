import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from svdkifmm.surfaces import (ConfigError, SurfaceRole, SurfaceSpec, bem_offset,
                               sample_cube_surface, surface_for, surface_halfwidths)


@pytest.mark.parametrize("p, n", [(2, 8), (4, 56), (6, 152), (8, 296)])
def test_point_counts(p, n):
    cloud = sample_cube_surface(np.zeros(3), 1.0, p)
    assert len(cloud.points) == n == SurfaceSpec(p, 0.1).n_points
    assert len(np.unique(cloud.points, axis=0)) == n


@given(st.integers(2, 12))
def test_count_identity(p):
    assert SurfaceSpec(p, 0.0).n_points == p**3 - (p - 2) ** 3


def test_points_on_boundary_and_deterministic():
    c = np.array([0.3, -1.0, 2.0])
    a = sample_cube_surface(c, 0.7, 5)
    b = sample_cube_surface(c, 0.7, 5)
    assert np.array_equal(a.points, b.points)
    assert np.allclose(np.abs(a.points - c).max(axis=1), 0.7, rtol=0, atol=1e-15)
    corners = sample_cube_surface(np.zeros(3), 1.0, 2).points
    assert np.array_equal(np.abs(corners), np.ones((8, 3)))


def test_halfwidths():
    assert surface_halfwidths(1.0, 0.0) == (1.0, 3.0)
    assert surface_halfwidths(1.0, 0.5) == (1.5, 2.0)
    e, c = surface_halfwidths(1.0, 0.5)
    assert c - e == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        surface_halfwidths(1.0, 2 / 3)
    with pytest.raises(ConfigError):
        sample_cube_surface(np.zeros(3), 1.0, 1)
    with pytest.raises(ConfigError):
        SurfaceSpec(6, 0.7)


def test_bem_offset():
    assert bem_offset(64, 0.5) == pytest.approx(0.0625)
    assert bem_offset(100, 0.5) == pytest.approx(0.05)
    with pytest.raises(ConfigError, match="s_max"):
        bem_offset(1, 0.9)


@given(st.floats(0, 0.66), st.floats(0.01, 10))
def test_nesting(d, r):
    spec = SurfaceSpec(4, d)
    ue = surface_for(np.zeros(3), r, spec, SurfaceRole.UPWARD_EQUIVALENT)
    uc = surface_for(np.zeros(3), r, spec, SurfaceRole.UPWARD_CHECK)
    de = surface_for(np.zeros(3), r, spec, SurfaceRole.DOWNWARD_EQUIVALENT)
    dc = surface_for(np.zeros(3), r, spec, SurfaceRole.DOWNWARD_CHECK)
    assert ue.owner_halfwidth < uc.owner_halfwidth
    assert dc.owner_halfwidth < de.owner_halfwidth
    # child upward-equivalent surface inside the parent's (condition 3)
    child = surface_for(np.full(3, r / 2), r / 2, spec, SurfaceRole.UPWARD_EQUIVALENT)
    reach = np.abs(child.points).max()
    assert reach <= ue.owner_halfwidth * (1 + 1e-15)
    if d > 1e-6:
        assert reach < ue.owner_halfwidth


def test_disjoint_from_interaction_list():
    d, r = 0.1, 1.0
    spec = SurfaceSpec(5, d)
    ue = surface_for(np.zeros(3), r, spec, SurfaceRole.UPWARD_EQUIVALENT).points
    for off in [(2, 0, 0), (2, 2, 2), (-3, 1, 0)]:
        dc = surface_for(2 * r * np.array(off, float), r, spec,
                         SurfaceRole.DOWNWARD_CHECK).points
        gap = np.linalg.norm(ue[:, None] - dc[None], axis=-1).min()
        assert gap >= (2 - 3 * d) * r - 1e-12
