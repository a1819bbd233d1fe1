import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmcf import cmc
from mmcf import diagnostics as dg
from mmcf.exact import boundary_cap
from mmcf.geometry import Discretization, axisymmetric_grid, boundary_angle, mean_curvature

BOTH = [Discretization.CONSERVATIVE, Discretization.CENTRAL]


@pytest.mark.parametrize("kw", [
    dict(sigma_target=1.2), dict(sigma_target=0.5, sigma_start=0.4), dict(sigma_target=0.5, step=0),
    dict(sigma_target=0.5, newton_tol=0), dict(sigma_target=0.5, min_step=0.1, step=0.05),
])
def test_plan_validation(kw):
    with pytest.raises(ValueError):
        cmc.ContinuationPlan(**kw)


@pytest.mark.parametrize("disc", BOTH)
@pytest.mark.parametrize("n", [1, 2, 3])
def test_analytic_jacobian_matches_finite_differences(n, disc):
    assert cmc.validate_jacobian(n, disc) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.2, 0.2), st.floats(-0.9, 0.9), st.sampled_from(BOTH))
def test_jacobian_random_fields(bump, sigma, disc):
    f = cmc.horosphere(1.0, 0.2, 2, 21)
    g = f.grid
    f = f.with_values(f.v + bump * np.cos(0.5 * math.pi * g.theta / g.theta[-1]))
    J = cmc.jacobian_dense(f, sigma, disc)
    fd = cmc.fd_jacobian(f, sigma, disc)
    assert np.max(np.abs(J - fd)) <= 1e-5 * max(1.0, np.max(np.abs(J)))


def test_residual_example_on_hemisphere():
    # constant v has H = 0, so F = (n w / y)(H - sigma) = -n sigma / y in the interior
    g = axisymmetric_grid(2, 1.0, 41)
    f = cmc.horosphere(1.0, 0.05, 2, 41).with_values(np.zeros(41))
    for disc in BOTH:
        F = cmc.cmc_residual(f.with_values(np.zeros(f.grid.size)), 0.3, disc)
        inner = f.grid.interior
        assert np.allclose(F[inner], -2 * 0.3 / f.grid.y[inner], rtol=1e-12)
        assert F[-1] == 0.0
    assert g.size == 41


def test_newton_from_exact_cap_is_immediate():
    theta_b, _ = boundary_angle(1.0, 0.05)
    cap = boundary_cap(1.0, 0.5, 0.05, axisymmetric_grid(2, theta_b, 200))
    hist = []
    sol = cmc.newton_solve(cap, 0.5, history=hist)
    assert len(hist) <= 3
    assert np.max(np.abs(sol.v - cap.v)) < 1e-5


def test_newton_converges_quadratically():
    f = cmc.horosphere(1.0, 0.05, 2, 100)
    hist = []
    cmc.newton_solve(f, 0.95, history=hist)
    assert hist[-1] < 1e-10
    # once in the asymptotic regime the exponent is close to 2
    r = [h for h in hist if h < 1e-1 and h > 1e-11]
    ratios = [math.log(b) / math.log(a) for a, b in zip(r, r[1:]) if a < 1e-2]
    assert ratios and max(ratios) > 1.6


def test_newton_raises_no_convergence():
    f = cmc.horosphere(1.0, 0.05, 2, 100)
    plan = cmc.ContinuationPlan(sigma_target=0.5, max_newton_iters=1)
    with pytest.raises(cmc.NoConvergence) as info:
        cmc.newton_solve(f, 0.5, plan)
    assert info.value.sigma == 0.5 and info.value.residual > 0


def test_continuation_reaches_target_and_logs():
    plan = cmc.ContinuationPlan(sigma_target=0.8, step=0.1)
    out = cmc.continuation(1.0, 0.05, plan, n=2, N=100)
    assert out.sigma == pytest.approx(0.8)
    assert [round(e.sigma, 12) for e in out.log] == [0.9, 0.8]
    assert all(e.final_residual < 1e-9 for e in out.log)
    H = mean_curvature(out.field)
    assert np.nanmax(np.abs(H - 0.8)) < 5e-3


def test_continuation_error_carries_last_sigma():
    plan = cmc.ContinuationPlan(sigma_target=0.0, step=0.5, max_newton_iters=1, min_step=0.01)
    with pytest.raises(cmc.ContinuationError) as info:
        cmc.continuation(1.0, 0.05, plan, n=2, N=100)
    assert info.value.last_sigma == 1.0
    assert info.value.last_field is not None


def test_continuation_rejects_zero_eps():
    with pytest.raises(ValueError):
        cmc.continuation(1.0, 0.0, cmc.ContinuationPlan(sigma_target=0.5))


def test_construct_initial_matches_cap():
    """The H = sigma0 surface spanning a circle is the spherical cap."""
    f = cmc.construct_initial(1.0, 0.05, 0.9, n=2, N=200)
    cap = boundary_cap(1.0, 0.9, 0.05, f.grid)
    assert np.max(np.abs(f.v - cap.v)) < 1e-4
    assert cmc.construct_initial(1.0, 0.05, 1.0, N=50).u == pytest.approx(np.full(50, 0.05))
    with pytest.raises(ValueError):
        cmc.construct_initial(1.0, 0.05, -1.0)


def test_construct_initial_meridian():
    f = cmc.construct_initial((-0.6, 1.2), 0.05, 0.9, n=1, N=100)
    assert all(c.ok for c in cmc.height_checks(f, (-0.6, 1.2), 0.05, 0.9))


def test_height_checks_fail_on_bad_surface():
    f = cmc.horosphere(1.0, 0.05, 2, 50)
    upper, lower = cmc.height_checks(f.with_values(f.v + 3.0), 1.0, 0.05, 0.9)
    assert upper.status == dg.FAIL
    upper, lower = cmc.height_checks(f, 1.0, 0.05, 0.5)
    assert lower.status == dg.FAIL


def test_boundary_normal_approaches_sigma0():
    vals = []
    for eps in (0.2, 0.1, 0.05):
        f = cmc.construct_initial(1.0, eps, 0.9, n=2, N=200)
        rep = cmc.boundary_normal_report(f, 0.9)
        vals.append(rep["boundary"][0])
    gaps = [abs(v - 0.9) for v in vals]
    assert gaps[0] > gaps[1] > gaps[2]


def test_euclidean_curvature_sandwich_and_subharmonicity():
    f = cmc.construct_initial(1.0, 0.05, 0.9, n=2, N=200)
    assert all(c.ok for c in cmc.euclidean_curvature_sandwich(f, 1.0, 0.05, 0.9))
    assert cmc.subharmonicity_report(f, 0.9).status == dg.PASS


def test_roundoff_floor_scales_with_grid():
    a = cmc.roundoff_floor(cmc.horosphere(1.0, 0.05, 2, 100), 0.5)
    b = cmc.roundoff_floor(cmc.horosphere(1.0, 0.05, 2, 400), 0.5)
    assert 0 < a < b < 1e-8


def test_write_continuation_log(tmp_path):
    entries = [cmc.ContinuationEntry(0.95, 3, 1e-13), cmc.ContinuationEntry(0.9, 2, 2e-13)]
    path = tmp_path / "c.csv"
    cmc.write_continuation_log(path, entries)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["sigma", "iters", "final_residual"]
    assert float(rows[2][0]) == 0.9 and rows[2][1] == "2"
