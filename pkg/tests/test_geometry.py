import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmcf import diagnostics as dg
from mmcf.exact import boundary_cap, horosphere_field, meridian_sphere, sphere_field
from mmcf.geometry import (
    GridError,
    HeightField,
    MeridianGrid,
    Topology,
    axisymmetric_grid,
    boundary_angle,
    derivatives,
    dual_cell_weights,
    embed,
    field_from_dict,
    load_snapshot,
    mean_curvature,
    mean_curvature_conservative,
    mean_curvature_via_euclidean,
    meridian_grid,
    pointwise,
    profile_curvature,
    save_snapshot,
    snapshot_dict,
)

# independent high-precision values (50-digit arithmetic)
THETA_B_005 = 1.520837931072953857821315404604906560607307619264
PHI_005 = 0.0012484400992935994901159675321340897623670374808637


def cap(sigma, eps, n, N):
    theta_b, _ = boundary_angle(1.0, eps)
    if n == 1:
        return sphere_field(meridian_sphere(-1.0, 1.0, sigma, eps), meridian_grid(-theta_b, theta_b, N))
    return boundary_cap(1.0, sigma, eps, axisymmetric_grid(n, theta_b, N))


def smooth_field(grid, coeffs):
    """Even-at-the-pole smooth perturbation of the horosphere-like profile."""
    th = grid.theta
    v = 0.1 + sum(c * np.cos((k + 1) * th) for k, c in enumerate(coeffs))
    return HeightField(grid, v)


# -- grids and fields ------------------------------------------------------------

class TestGrid:
    def test_axisymmetric_shape(self):
        g = axisymmetric_grid(2, 1.0, 11)
        assert g.size == 11 and g.h == pytest.approx(0.1)
        assert g.interior == slice(0, 10)
        assert list(g.dirichlet) == [10]
        assert g.y[0] == 1.0

    def test_meridian_two_ends(self):
        g = meridian_grid(-1.0, 1.0, 21)
        assert g.topology is Topology.MERIDIAN
        assert list(g.dirichlet) == [0, 20]
        assert np.all(g.measure() == 1.0)

    def test_theta_read_only(self):
        g = axisymmetric_grid(2, 1.0, 11)
        with pytest.raises(ValueError):
            g.theta[0] = 1.0

    @pytest.mark.parametrize("theta", [[0, 0.2, 0.1, 0.3, 0.4], [0, 0.1, 0.25, 0.3, 0.4]])
    def test_rejects_bad_spacing(self, theta):
        with pytest.raises(GridError):
            MeridianGrid(2, Topology.AXISYMMETRIC, np.array(theta))

    def test_rejects_wrong_dimension_for_topology(self):
        with pytest.raises(GridError):
            axisymmetric_grid(1, 1.0, 11)
        with pytest.raises(GridError):
            MeridianGrid(2, Topology.MERIDIAN, np.linspace(-1, 1, 11))

    def test_rejects_domain_reaching_the_ideal_boundary(self):
        with pytest.raises(GridError):
            axisymmetric_grid(2, math.pi / 2, 11)
        with pytest.raises(GridError):
            meridian_grid(-math.pi / 2, 0.5, 11)

    def test_field_validation(self):
        g = axisymmetric_grid(2, 1.0, 11)
        with pytest.raises(GridError):
            HeightField(g, np.zeros(10))
        v = np.zeros(11)
        v[3] = np.nan
        with pytest.raises(GridError):
            HeightField(g, v)
        f = HeightField(g, np.zeros(11))
        with pytest.raises(ValueError):
            f.v[0] = 1.0

    def test_too_few_nodes_for_stencils(self):
        g = axisymmetric_grid(2, 1.0, 4)
        with pytest.raises(GridError):
            derivatives(HeightField(g, np.zeros(4)))


def test_boundary_angle_frozen():
    theta_b, phi = boundary_angle(1.0, 0.05)
    assert theta_b == pytest.approx(THETA_B_005, rel=1e-15)
    assert phi == pytest.approx(PHI_005, rel=1e-14)
    assert boundary_angle(1.0, 0.0) == (math.pi / 2, 0.0)
    with pytest.raises(ValueError):
        boundary_angle(0.0, 0.1)
    with pytest.raises(ValueError):
        boundary_angle(1.0, -0.1)


# -- derivatives -----------------------------------------------------------------

def test_central_stencils_exact_on_quadratics():
    g = meridian_grid(-0.5, 0.7, 13)
    th = g.theta
    f = HeightField(g, 1.0 + 2.0 * th - 3.0 * th**2)
    d1, d2 = derivatives(f)
    assert np.allclose(d1[1:-1], 2.0 - 6.0 * th[1:-1], atol=1e-12)
    assert np.allclose(d2[1:-1], -6.0, atol=1e-9)
    assert np.isnan(d1[0]) and np.isnan(d2[-1])


def test_one_sided_stencils_exact_on_cubics():
    g = meridian_grid(-0.5, 0.7, 13)
    th = g.theta
    f = HeightField(g, th**3 - th**2)
    d1, d2 = derivatives(f, endpoints=True)
    # first derivative stencil is exact on quadratics only
    f2 = HeightField(g, 0.5 * th**2 + th)
    e1, _ = derivatives(f2, endpoints=True)
    assert e1[0] == pytest.approx(th[0] + 1, abs=1e-12)
    assert e1[-1] == pytest.approx(th[-1] + 1, abs=1e-12)
    assert d2[0] == pytest.approx(6 * th[0] - 2, abs=1e-8)
    assert d2[-1] == pytest.approx(6 * th[-1] - 2, abs=1e-8)


def test_pole_ghost_node():
    g = axisymmetric_grid(2, 1.0, 21)
    f = HeightField(g, np.cos(g.theta))
    d1, d2 = derivatives(f)
    assert d1[0] == 0.0
    assert d2[0] == pytest.approx(-1.0, abs=1e-3)


# -- curvature -------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("sigma", [0.0, 0.3, 0.5, 0.9])
def test_cap_has_constant_curvature(n, sigma):
    errs = []
    for N in (200, 399):
        H = mean_curvature(cap(sigma, 0.05, n, N))
        errs.append(np.nanmax(np.abs(H - sigma)))
    assert errs[0] <= 2e-3
    if errs[0] > 1e-12:
        assert errs[0] / errs[1] >= 3.5


def test_sign_convention_cap_and_horosphere():
    # the cap has H = +sigma with respect to the normal pointing away from the origin
    H = mean_curvature(cap(0.5, 0.2, 2, 101))
    assert np.nanmean(H) == pytest.approx(0.5, abs=1e-4)
    g = axisymmetric_grid(2, boundary_angle(1.0, 0.05)[0], 400)
    assert np.nanmax(np.abs(mean_curvature(horosphere_field(0.05, g)) - 1.0)) < 1e-4


def test_dirichlet_nodes_nan_unless_requested():
    f = cap(0.5, 0.05, 1, 51)
    H = mean_curvature(f)
    assert np.isnan(H[0]) and np.isnan(H[-1])
    H = mean_curvature(f, endpoints=True)
    assert np.all(np.isfinite(H))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.3, 0.3), min_size=1, max_size=4), st.integers(2, 4))
def test_two_curvature_routes_agree(coeffs, n):
    f = smooth_field(axisymmetric_grid(n, 1.2, 41), coeffs)
    a = mean_curvature(f, endpoints=True)
    b = mean_curvature_via_euclidean(f, endpoints=True)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.3, 0.3), min_size=1, max_size=4), st.integers(1, 3))
def test_reduced_formula_matches_profile_oracle(coeffs, n):
    if n == 1:
        g = meridian_grid(-1.0, 1.2, 41)
    else:
        g = axisymmetric_grid(n, 1.2, 41)
    f = smooth_field(g, coeffs)
    vt, vtt = derivatives(f, endpoints=True)
    th = g.theta
    ev = np.exp(f.v)
    rho, x = embed(f)
    rt = ev * (vt * np.sin(th) + np.cos(th))
    xt = ev * (vt * np.cos(th) - np.sin(th))
    rtt = ev * ((vtt + vt**2 - 1) * np.sin(th) + 2 * vt * np.cos(th))
    xtt = ev * ((vtt + vt**2 - 1) * np.cos(th) - 2 * vt * np.sin(th))
    oracle = profile_curvature(rho, x, rt, xt, rtt, xtt, n)
    assert np.allclose(mean_curvature(f, endpoints=True), oracle, atol=1e-10, rtol=1e-10)


def test_pointwise_quantities():
    f = cap(0.5, 0.1, 2, 81)
    geo = pointwise(f)
    assert np.allclose(geo.u, f.grid.y * np.exp(f.v))
    assert np.allclose(geo.w, np.sqrt(1 + geo.v_theta**2))
    assert np.allclose(geo.e_dot_grad_v, -np.sin(f.grid.theta) * geo.v_theta)


# -- conservative operator --------------------------------------------------------

def test_dual_cell_weights_partition_the_measure():
    g = axisymmetric_grid(2, 1.3, 50)
    assert np.sum(dual_cell_weights(g)) == pytest.approx(2 * math.pi * (1 - math.cos(1.3)), rel=1e-13)
    # y^{-3} dz integrates to pi (sec^2 - 1)
    assert np.sum(dual_cell_weights(g, 3)) == pytest.approx(math.pi * (1 / math.cos(1.3) ** 2 - 1), rel=1e-12)
    m = meridian_grid(-1.0, 1.0, 11)
    w = dual_cell_weights(m)
    assert w[0] == pytest.approx(0.1) and w[5] == pytest.approx(0.2)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_conservative_curvature_second_order(n):
    errs = []
    for N in (100, 199, 397):
        H = mean_curvature_conservative(cap(0.5, 0.05, n, N))
        errs.append(np.nanmax(np.abs(H - 0.5)))
    assert errs[0] < 1e-4
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-0.3, 0.3), min_size=1, max_size=3), st.integers(1, 3),
       st.floats(-0.9, 0.9))
def test_conservative_curvature_is_energy_gradient(coeffs, n, sigma):
    """dI/dv_i = -n W_i (H_i - sigma) exactly, W_i the dual-cell weight of y^{-(n+1)}."""
    g = meridian_grid(-1.0, 1.1, 25) if n == 1 else axisymmetric_grid(n, 1.1, 25)
    f = smooth_field(g, coeffs)
    H = mean_curvature_conservative(f)
    W = dual_cell_weights(g, n + 1)
    for i in range(g.size)[g.interior][::4]:
        d = 1e-6
        e = np.zeros(g.size)
        e[i] = d
        fd = (dg.energy(f.with_values(f.v + e), sigma) - dg.energy(f.with_values(f.v - e), sigma)) / (2 * d)
        assert fd == pytest.approx(-n * W[i] * (H[i] - sigma), rel=1e-6, abs=1e-7)


# -- snapshots ----------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=6, max_size=30))
def test_snapshot_roundtrip_is_bitwise(values):
    g = axisymmetric_grid(3, 1.1, len(values))
    f = HeightField(g, np.array(values))
    back = field_from_dict(json.loads(json.dumps(snapshot_dict(f))))
    assert np.array_equal(back.v, f.v) and np.array_equal(back.grid.theta, g.theta)
    assert back.grid.n == 3 and back.grid.topology is Topology.AXISYMMETRIC


def test_snapshot_file(tmp_path):
    f = cap(0.3, 0.1, 1, 31)
    save_snapshot(f, tmp_path / "s.json")
    back = load_snapshot(tmp_path / "s.json")
    assert np.array_equal(back.v, f.v)
    assert back.grid.topology is Topology.MERIDIAN
