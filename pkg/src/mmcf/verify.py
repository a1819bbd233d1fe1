"""Acceptance matrix: oracle closures and flow/elliptic runs as named checks.

Each criterion returns a list of :class:`~mmcf.diagnostics.CheckResult`;
hard failures have status ``fail``, soft ones ``warn``.  Long runs shared by
several criteria are cached per process.
"""

from __future__ import annotations

import functools
import math
import time

import numpy as np

from . import cmc, diagnostics as dg, exact
from .diagnostics import FAIL, PASS, WARN, CheckResult
from .flow import FlowConfig, Status, check_rhs, epsilon_continuation, initial_field, run_to_stationarity
from .geometry import (
    Discretization,
    HeightField,
    axisymmetric_grid,
    boundary_angle,
    derivatives,
    discrete_mean_curvature,
    embed,
    mean_curvature,
    mean_curvature_via_euclidean,
    meridian_grid,
    profile_curvature,
)

SIGMA = 0.5
EPS = 0.05
BASE = FlowConfig(sigma=SIGMA, eps=EPS, r=1.0, n=2, N=200, dt=1e-3, t_max=50.0, residual_tol=1e-6)


def _check(name, ok, measured=None, bound=None, detail="", soft=False):
    status = PASS if ok else (WARN if soft else FAIL)
    return CheckResult(name, status, None if measured is None else float(measured),
                       None if bound is None else float(bound), detail)


def _cap_on_grid(sigma, eps, n, N):
    """Exact cap spanning the unit circle (or [-1, 1] for n = 1) on an N-node grid."""
    theta_b, _ = boundary_angle(1.0, eps)
    if n == 1:
        grid = meridian_grid(-theta_b, theta_b, N)
        return exact.sphere_field(exact.meridian_sphere(-1.0, 1.0, sigma, eps), grid)
    return exact.boundary_cap(1.0, sigma, eps, axisymmetric_grid(n, theta_b, N))


# -- cached runs --------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def run_a3(N=400, dt=1e-3):
    cfg = BASE.with_(N=N, dt=dt)
    return run_to_stationarity(cfg, initial_field(cfg, "perturbed_cap"), keep_fields_every=1)


@functools.lru_cache(maxsize=None)
def run_a5():
    cfg = BASE
    v0 = initial_field(cfg, "cmc", sigma0=0.9)
    return v0, run_to_stationarity(cfg, v0)


@functools.lru_cache(maxsize=None)
def run_a7():
    return epsilon_continuation(BASE.with_(diag_every=10), [0.2, 0.1, 0.05, 0.025], initial="cmc")


@functools.lru_cache(maxsize=None)
def run_a8():
    cfg = BASE.with_(residual_tol=1e-8, diag_every=50)
    return run_to_stationarity(cfg, initial_field(cfg, "perturbed_cap"))


@functools.lru_cache(maxsize=None)
def run_a12():
    # inward bump: the start stays inside the enclosing ball, as the height
    # bound presupposes
    cfg = BASE.with_(sigma=0.0, residual_tol=1e-9, diag_every=10)
    return run_to_stationarity(cfg, initial_field(cfg, "hemisphere", bump=-0.05))


# -- oracle closures ----------------------------------------------------------

def criterion_a1():
    """Curvature of exact caps: sup|H - sigma| <= 2e-3 at N = 200, order >= 3.5 on halving h."""
    t0 = time.perf_counter()
    worst_err, worst_ratio = 0.0, math.inf
    for n in (1, 2, 3):
        for sigma in (0.0, 0.3, 0.5, 0.9):
            errs = []
            for N in (200, 399):
                H = mean_curvature(_cap_on_grid(sigma, EPS, n, N))
                errs.append(float(np.nanmax(np.abs(H - sigma))))
            worst_err = max(worst_err, errs[0])
            if errs[0] > 1e-12:  # v constant at sigma = 0 is exact on any grid
                worst_ratio = min(worst_ratio, errs[0] / errs[1])
    elapsed = time.perf_counter() - t0
    return [
        _check("A1_curvature_error", worst_err <= 2e-3, worst_err, 2e-3),
        _check("A1_halving_ratio", worst_ratio >= 3.5, worst_ratio, 3.5),
        _check("A1_runtime", elapsed < 1.0, elapsed, 1.0),
    ]


def oracle_closures():
    """Independent checks of the geometry kernels against closed forms."""
    out = []
    worst = 0.0
    for n in (1, 2, 3):
        f = _cap_on_grid(0.5, EPS, n, 200)
        vt, vtt = derivatives(f, endpoints=True)
        th = f.grid.theta
        ev = np.exp(f.v)
        rho, x = embed(f)
        # derivatives of (e^v sin t, e^v cos t) from those of v
        rt = ev * (vt * np.sin(th) + np.cos(th))
        xt = ev * (vt * np.cos(th) - np.sin(th))
        rtt = ev * ((vtt + vt**2 - 1) * np.sin(th) + 2 * vt * np.cos(th))
        xtt = ev * ((vtt + vt**2 - 1) * np.cos(th) - 2 * vt * np.sin(th))
        H_profile = profile_curvature(rho, x, rt, xt, rtt, xtt, n)
        H = mean_curvature(f, endpoints=True)
        worst = max(worst, float(np.max(np.abs(H - H_profile))))
    out.append(_check("oracle_profile_curvature", worst <= 1e-10, worst, 1e-10))

    f = _cap_on_grid(0.3, EPS, 2, 200)
    gap = float(np.nanmax(np.abs(mean_curvature(f) - mean_curvature_via_euclidean(f))))
    out.append(_check("oracle_two_curvature_routes", gap <= 1e-12, gap, 1e-12))

    horo = cmc.horosphere(1.0, EPS, 2, 200)
    err = float(np.nanmax(np.abs(mean_curvature(horo) - 1.0)))
    out.append(_check("oracle_horosphere", err <= 1e-3, err, 1e-3))

    rhs_err = max(check_rhs(f, 0.3, discretization=d) for d in Discretization)
    out.append(_check("oracle_rhs_routes", rhs_err <= 1e-12, rhs_err, 1e-12))

    jac = max(cmc.validate_jacobian(n, d) for n in (1, 2, 3) for d in Discretization)
    out.append(_check("oracle_newton_jacobian", jac <= 1e-6, jac, 1e-6))

    theta_b, _ = boundary_angle(1.0, EPS)
    g = axisymmetric_grid(2, theta_b, 400)
    I = dg.energy(HeightField(g, np.full(400, math.log(1.3))), 0.0)
    closed = 2 * math.pi * (1 / math.cos(theta_b) - 1)
    rel = abs(I - closed) / closed
    out.append(_check("oracle_energy_closed_form", rel <= 1e-3, rel, 1e-3))

    errs = [dg.divergence_identity_error(_cap_on_grid(0.5, 0.3, 2, N)) for N in (100, 199)]
    ratio = errs[0] / errs[1]
    out.append(_check("oracle_divergence_identity_order", ratio >= 3.5, ratio, 3.5,
                      f"errors={errs[0]:.3e},{errs[1]:.3e}"))
    return out


# -- flow criteria -------------------------------------------------------------

def criterion_a2():
    t0 = time.perf_counter()
    cfg = BASE.with_(t_max=1.0, residual_tol=1e-300, diag_every=100)
    v0 = initial_field(cfg, "cap")
    res = run_to_stationarity(cfg, v0)
    drift = float(np.max(np.abs(res.field.v - v0.v)))
    elapsed = time.perf_counter() - t0
    return [
        _check("A2_cap_drift", drift <= 1e-6, drift, 1e-6, f"t={res.state.t:.3f}"),
        _check("A2_runtime", elapsed < 5.0, elapsed, 5.0),
    ]


def criterion_a3():
    t0 = time.perf_counter()
    res = run_a3()
    elapsed = time.perf_counter() - t0
    cap = initial_field(res.config, "cap")
    diff = float(np.max(np.abs(res.field.v - cap.v)))
    return [
        _check("A3_converged", res.status is Status.CONVERGED and res.state.t <= 50.0,
               res.state.t, 50.0, res.status.value),
        _check("A3_limit_vs_cap", diff <= 1e-3, diff, 1e-3),
        _check("A3_runtime", elapsed < 60.0, elapsed, 60.0, "includes cached reuse"),
    ]


def criterion_a4():
    descent, balance = dg.check_energy_balance(run_a3().records)
    fine = run_a3(N=799, dt=5e-4)
    descent_f, balance_f = dg.check_energy_balance(fine.records, rel_tol=0.01)
    return [
        CheckResult("A4_energy_descent", descent.status, descent.measured, descent.bound, descent.detail),
        CheckResult("A4_energy_balance", balance.status, balance.measured, balance.bound, balance.detail),
        CheckResult("A4_energy_descent_refined", descent_f.status, descent_f.measured,
                    descent_f.bound, descent_f.detail),
        CheckResult("A4_energy_balance_refined", balance_f.status, balance_f.measured,
                    balance_f.bound, balance_f.detail),
    ]


def criterion_a5():
    v0, res = run_a5()
    h0 = float(np.nanmin(discrete_mean_curvature(v0, res.config.discretization) - SIGMA))
    c = dg.check_monotone(res.records, h0)
    return [
        _check("A5_initial_H_above_sigma", h0 >= 0, h0, 0.0),
        CheckResult("A5_monotone", c.status, c.measured, c.bound, c.detail),
    ]


def criterion_a6():
    out = []
    for tag, res in (("A3", run_a3()), ("A5", run_a5()[1])):
        c = dg.check_gradient_quantity(res.records)
        out.append(CheckResult(f"A6_gradient_quantity_{tag}", c.status, c.measured, c.bound, c.detail))
    return out


def criterion_a7():
    results, report = run_a7()
    spread = report["w_spread"]
    ratios = report["ratios"]
    worst = max(ratios) if ratios else math.inf
    diffs = ", ".join(f"{d:.3e}" for d in report["sup_diffs"])
    return [
        _check("A7_all_converged", not report["partial"], None, None, ",".join(report["status"])),
        _check("A7_w_spread", spread <= 1.5, spread, 1.5),
        _check("A7_cauchy_ratio", worst <= 0.6, worst, 0.6, f"sup_diffs={diffs}"),
    ]


def criterion_a8():
    res = run_a8()
    plan = cmc.ContinuationPlan(sigma_target=SIGMA, discretization=res.config.discretization)
    newton = cmc.continuation(res.config.r, EPS, plan, res.config.n, res.config.N).field
    diff = float(np.max(np.abs(newton.v - res.field.v)))
    return [_check("A8_newton_vs_flow", diff <= 1e-6, diff, 1e-6,
                   f"flow residual_tol={res.config.residual_tol:g}")]


def _converged_runs():
    runs = [("A3", run_a3()), ("A4", run_a3(N=799, dt=5e-4)), ("A5", run_a5()[1]), ("A8", run_a8())]
    runs += [(f"A7_eps{e:g}", r) for e, r in run_a7()[0].items()]
    runs.append(("A12", run_a12()))
    return [(tag, r) for tag, r in runs if r.status is Status.CONVERGED]


def criterion_a9():
    out = []
    for tag, res in _converged_runs():
        cfg = res.config
        c = dg.check_height_bound(res.records, float(cfg.r), cfg.eps, cfg.sigma)
        out.append(CheckResult(f"A9_height_bound_{tag}", c.status, c.measured, c.bound, c.detail))
    return out


def barrier_test_spheres(config, v0):
    """Enclosing type-1 ball (the cap's sphere dilated just enough to contain
    ``v0``, times 1.001) and the type-2 ball tangent at the boundary point."""
    r = float(config.r)
    sigma = config.sigma
    R = exact.radius_from_boundary(r, sigma, config.eps)
    # dilating about the origin moves the center with the radius: the sphere
    # of the family through (rho, x) has the radius below
    rho, x = embed(v0)
    through = (x * sigma + np.sqrt(x**2 * sigma**2 + (1 - sigma**2) * (x**2 + rho**2))) / (1 - sigma**2)
    inner = exact.EquidistanceSphere(sigma, R).scaled(1.001 * max(1.0, float(np.max(through)) / R))
    _, outer = exact.barrier_spheres(r, config.eps, 0.5, 0.5, config.sigma)
    return inner, outer


def criterion_a10():
    res = run_a3()
    inner, outer = barrier_test_spheres(res.config, res.fields[0][-1])
    a = dg.check_barrier_containment(res.fields, inner, "inside")
    b = dg.check_barrier_containment(res.fields, outer, "outside")
    return [
        CheckResult("A10_inside_type1", a.status, a.measured, a.bound,
                    f"R={inner.R:.6g} (dilation {inner.R / base_radius(res.config):.4f})"),
        CheckResult("A10_outside_type2", b.status, b.measured, b.bound,
                    f"R={outer.R:.6g} center=({outer.offset:g}, {outer.center_height:.6g})"),
    ]


def base_radius(config):
    return exact.radius_from_boundary(float(config.r), config.sigma, config.eps)


def tangent_plane_field(config, grid):
    """eta on ``grid`` for the plane tangent to the cap sphere at the lifted boundary point."""
    sphere = exact.EquidistanceSphere(config.sigma, base_radius(config))
    p0, lam = exact.tangent_plane_at(sphere, float(config.r), config.eps)
    return exact.tangent_plane_eta(p0, config.sigma, np.sin(grid.theta), grid.y, lam=lam)


def criterion_a11():
    res = run_a3()
    eta = tangent_plane_field(res.config, res.field.grid)
    c = dg.boundary_asymptotics_fit(res.field, eta)
    return [CheckResult("A11_boundary_asymptotics", c.status, c.measured, c.bound, c.detail)]


def criterion_a12():
    res = run_a12()
    osc = float(np.ptp(res.field.v))
    descent, _ = dg.check_energy_balance(res.records)
    return [
        _check("A12_converged", res.status is Status.CONVERGED, res.state.t, res.config.t_max),
        _check("A12_oscillation", osc <= 1e-6, osc, 1e-6),
        CheckResult("A12_area_descent", descent.status, descent.measured, descent.bound, descent.detail),
    ]


CRITERIA = {
    "A1": criterion_a1, "A2": criterion_a2, "A3": criterion_a3, "A4": criterion_a4,
    "A5": criterion_a5, "A6": criterion_a6, "A7": criterion_a7, "A8": criterion_a8,
    "A9": criterion_a9, "A10": criterion_a10, "A11": criterion_a11, "A12": criterion_a12,
}

SUITES = {
    "oracles": ("A1", "closures"),
    "flow": ("A2", "A3", "A4", "A5", "A6", "A7", "A8"),
    "all": ("closures",) + tuple(CRITERIA),
}


def run_suite(name):
    """Run a named suite; returns the list of CheckResults.  KeyError for unknown names."""
    if name not in SUITES:
        raise KeyError(name)
    out = []
    for key in SUITES[name]:
        out.extend(oracle_closures() if key == "closures" else CRITERIA[key]())
    return out


def hard_ok(results):
    return all(r.status != FAIL for r in results)
