"""Stationary constant mean curvature radial graphs by damped Newton iteration.

The stationary equation in reduced form is

    F(v) = v_tt / w^2 + (n-1) cot(t) v_t - (n/y)(sigma w - sin(t) v_t) = (n w / y)(H - sigma),

with Dirichlet data on the lifted boundary.  Starting from the horosphere
(the exact sigma = 1 solution through the lifted boundary) the target sigma is
reached by continuation, halving the sigma step whenever Newton fails.
"""

from __future__ import annotations

import csv
import functools
import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import solve_banded

from .diagnostics import FAIL, NA, PASS, WARN, CheckResult
from .geometry import (
    Discretization,
    HeightField,
    Topology,
    axisymmetric_grid,
    boundary_angle,
    cot_times,
    density,
    derivatives,
    dual_cell_weights,
    embed,
    mean_curvature_conservative,
    meridian_grid,
    nodal_w,
    pointwise,
)

log = logging.getLogger(__name__)

_CONSERVATIVE = Discretization.CONSERVATIVE
_ULP = np.finfo(float).eps


class NoConvergence(RuntimeError):
    """Newton failed; carries the sigma and the best residual reached."""

    def __init__(self, message, sigma, residual, iterations):
        super().__init__(message)
        self.sigma = sigma
        self.residual = residual
        self.iterations = iterations


class ContinuationError(RuntimeError):
    """The sigma step fell below its floor; ``last_sigma`` is the last solved value."""

    def __init__(self, message, last_sigma, last_field=None):
        super().__init__(message)
        self.last_sigma = last_sigma
        self.last_field = last_field


@dataclass(frozen=True)
class ContinuationPlan:
    sigma_target: float
    sigma_start: float = 1.0
    step: float = 0.05
    newton_tol: float = 1e-12
    max_newton_iters: int = 30
    max_halvings: int = 10
    min_step: float = 1e-3
    discretization: Discretization = _CONSERVATIVE

    def __post_init__(self):
        if not self.sigma_target < self.sigma_start:
            raise ValueError("sigma_target must be below sigma_start")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not -1 < self.sigma_target:
            raise ValueError("sigma_target must exceed -1")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.max_newton_iters < 1 or self.max_halvings < 0:
            raise ValueError("iteration limits must be positive")
        if not 0 < self.min_step <= self.step:
            raise ValueError("min_step must lie in (0, step]")
        object.__setattr__(self, "discretization", Discretization(self.discretization))


@dataclass
class ContinuationEntry:
    sigma: float
    iters: int
    final_residual: float


@dataclass
class ContinuationResult:
    field: HeightField
    sigma: float
    log: list = dc_field(default_factory=list)
    history: list = dc_field(default_factory=list)  # residual norms of the last Newton solve


# -- residual and Jacobian --------------------------------------------------------

def cmc_residual(field, sigma, discretization=_CONSERVATIVE):
    """F(v) per node, zero at Dirichlet nodes (their values are imposed)."""
    grid = field.grid
    n = grid.n
    y = grid.y
    if Discretization(discretization) is _CONSERVATIVE:
        out = n * nodal_w(field) / y * (mean_curvature_conservative(field) - sigma)
    else:
        vt, vtt = derivatives(field)
        w = np.sqrt(1.0 + vt**2)
        a_op = vtt / w**2 + (n - 1) * cot_times(grid, vt, vtt)
        out = a_op - n / y * (sigma * w - np.sin(grid.theta) * vt)
    out[grid.dirichlet] = 0.0
    return out


def jacobian_bands(field, sigma, discretization=_CONSERVATIVE):
    """Analytic dF/dv as (lower, diag, upper); lower[i] = dF_i/dv_{i-1}.

    Dirichlet rows are the identity.
    """
    grid = field.grid
    n = grid.n
    h = grid.h
    N = grid.size
    y = grid.y
    vt, vtt = derivatives(field)
    vt = np.nan_to_num(vt)
    vtt = np.nan_to_num(vtt)
    w = np.sqrt(1.0 + vt**2)
    lo = np.zeros(N)
    di = np.zeros(N)
    up = np.zeros(N)
    pole = grid.topology is Topology.AXISYMMETRIC

    if Discretization(discretization) is _CONSERVATIVE:
        mid = 0.5 * (grid.theta[1:] + grid.theta[:-1])
        s = np.diff(field.v) / h
        k = density(grid, mid) * np.cos(mid) ** -n / (h * (1.0 + s**2) ** 1.5)
        W = n * dual_cell_weights(grid, n + 1)
        g = mean_curvature_conservative(field) - sigma
        pre = n * w / y / W  # dF/d(net) at fixed w
        dF_dw = n / y * g
        dw_dvt = vt / w
        di[:-1] -= k
        di[1:] -= k
        up[:-1] = k
        lo[1:] = k
        lo *= pre
        di *= pre
        up *= pre
        if pole:
            dw_dvt[0] = 0.0
        lo -= dF_dw * dw_dvt / (2 * h)
        up += dF_dw * dw_dvt / (2 * h)
    else:
        cot = np.zeros(N)
        inner = grid.theta != 0
        cot[inner] = 1.0 / np.tan(grid.theta[inner])
        d_vtt = 1.0 / w**2
        d_vt = (-2.0 * vtt * vt / w**4 + (n - 1) * cot
                - n / y * (sigma * vt / w - np.sin(grid.theta)))
        if grid.topology is Topology.MERIDIAN:
            d_vt = -2.0 * vtt * vt / w**4 - n / y * (sigma * vt / w - np.sin(grid.theta))
        lo = d_vtt / h**2 - d_vt / (2 * h)
        di = -2.0 * d_vtt / h**2
        up = d_vtt / h**2 + d_vt / (2 * h)
        if pole:
            # F_0 = n v_tt - n sigma / y with v_tt = 2 (v_1 - v_0) / h^2
            lo[0] = 0.0
            di[0] = -2.0 * n / h**2
            up[0] = 2.0 * n / h**2
    for i in grid.dirichlet:
        lo[i], di[i], up[i] = 0.0, 1.0, 0.0
    lo[0] = 0.0
    up[-1] = 0.0
    return lo, di, up


def jacobian_dense(field, sigma, discretization=_CONSERVATIVE):
    lo, di, up = jacobian_bands(field, sigma, discretization)
    return np.diag(di) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)


def fd_jacobian(field, sigma, discretization=_CONSERVATIVE, delta=1e-6):
    """Central finite-difference Jacobian; Dirichlet rows set to the identity."""
    N = field.grid.size
    J = np.zeros((N, N))
    for j in range(N):
        e = np.zeros(N)
        e[j] = delta
        fp = cmc_residual(field.with_values(field.v + e), sigma, discretization)
        fm = cmc_residual(field.with_values(field.v - e), sigma, discretization)
        J[:, j] = (fp - fm) / (2 * delta)
    for i in field.grid.dirichlet:
        J[i] = 0.0
        J[i, i] = 1.0
    return J


@functools.lru_cache(maxsize=None)
def validate_jacobian(n, discretization=_CONSERVATIVE, N=21, sigma=0.7, rtol=1e-6):
    """Compare the analytic Jacobian with finite differences on a coarse bumped cap.

    Returns the relative error; raises RuntimeError beyond ``rtol``.
    """
    from .exact import boundary_cap, meridian_sphere, sphere_field

    grid = _grid(1.0 if n > 1 else (-0.8, 1.2), 0.1, n, N)
    if n == 1:
        base = sphere_field(meridian_sphere(-0.8, 1.2, sigma, 0.1), grid)
    else:
        base = boundary_cap(1.0, sigma, 0.1, grid)
    bump = 0.1 * np.sin(np.linspace(0.0, math.pi, N)) ** 2
    field = base.with_values(base.v + bump)
    A = jacobian_dense(field, sigma, discretization)
    B = fd_jacobian(field, sigma, discretization)
    err = float(np.max(np.abs(A - B)) / np.max(np.abs(B)))
    if err > rtol:
        raise RuntimeError(f"analytic Jacobian disagrees with finite differences ({err:.2e})")
    return err


def roundoff_floor(field, sigma, discretization=_CONSERVATIVE):
    """Residual noise from rounding v: ulp * max_i sum_j |J_ij| |v_j|.

    Newton residuals stagnate a few times below this level.
    """
    lo, di, up = jacobian_bands(field, sigma, discretization)
    v = np.abs(field.v)
    row = np.abs(di) * v
    row[1:] += np.abs(lo[1:]) * v[:-1]
    row[:-1] += np.abs(up[:-1]) * v[1:]
    row[field.grid.dirichlet] = 0.0
    return _ULP * float(np.max(row))


# -- Newton ------------------------------------------------------------------------

def _sup(x):
    return float(np.max(np.abs(x)))


def newton_solve(v_init, sigma, plan=None, history=None, discretization=None):
    """Damped Newton for F(v) = 0 from ``v_init`` with its Dirichlet values kept.

    Stops when the sup-residual drops below ``plan.newton_tol`` or below the
    roundoff floor of the grid, whichever is larger.  Residual norms are
    appended to ``history`` if given.  Raises :class:`NoConvergence`.
    """
    tol = plan.newton_tol if plan else 1e-12
    max_iters = plan.max_newton_iters if plan else 30
    max_halvings = plan.max_halvings if plan else 10
    if discretization is None:
        discretization = plan.discretization if plan else _CONSERVATIVE
    field = v_init
    F = cmc_residual(field, sigma, discretization)
    res = _sup(F)
    if not math.isfinite(res):
        raise NoConvergence("non-finite initial residual", sigma, res, 0)
    if history is not None:
        history.append(res)
    for it in range(1, max_iters + 1):
        if res < max(tol, roundoff_floor(field, sigma, discretization)):
            return field
        lo, di, up = jacobian_bands(field, sigma, discretization)
        ab = np.vstack((np.concatenate(([0.0], up[:-1])), di, np.concatenate((lo[1:], [0.0]))))
        try:
            step = solve_banded((1, 1), ab, -F, check_finite=False)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular Jacobian", sigma, res, it) from None
        step[field.grid.dirichlet] = 0.0
        alpha = 1.0
        for _ in range(max_halvings + 1):
            trial = field.v + alpha * step
            if np.all(np.isfinite(trial)):
                cand = field.with_values(trial)
                F_new = cmc_residual(cand, sigma, discretization)
                res_new = _sup(F_new)
                if math.isfinite(res_new) and res_new < res:
                    break
            alpha *= 0.5
        else:
            floor = roundoff_floor(field, sigma, discretization)
            if res < 100 * max(tol, floor):
                # stagnated within a hair of the floor; accept
                return field
            raise NoConvergence(f"damping failed at iteration {it} (residual {res:.3e})",
                                sigma, res, it)
        field, F, res = cand, F_new, res_new
        if history is not None:
            history.append(res)
    if res < max(tol, roundoff_floor(field, sigma, discretization)):
        return field
    raise NoConvergence(f"no convergence after {max_iters} iterations (residual {res:.3e})",
                        sigma, res, max_iters)


# -- continuation -----------------------------------------------------------------

def _grid(r, eps, n, N):
    if n == 1:
        xl, xr = _endpoints(r)
        return meridian_grid(math.atan2(xl, eps), math.atan2(xr, eps), N)
    theta_b, _ = boundary_angle(float(r), eps)
    return axisymmetric_grid(n, theta_b, N)


def _endpoints(r):
    try:
        xl, xr = r
    except TypeError:
        xl, xr = -float(r), float(r)
    return float(xl), float(xr)


def horosphere(r, eps, n, N):
    """The flat graph x_{n+1} = eps through the lifted boundary."""
    grid = _grid(r, eps, n, N)
    return HeightField(grid, np.log(eps / grid.y))


def continuation(r, eps, plan, n=2, N=200):
    """Walk sigma from ``plan.sigma_start`` down to ``plan.sigma_target``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    validate_jacobian(n, plan.discretization)
    field = horosphere(r, eps, n, N)
    sigma = plan.sigma_start
    entries = []
    history = []
    step = plan.step
    while sigma > plan.sigma_target:
        nxt = max(sigma - step, plan.sigma_target)
        history = []
        try:
            field = newton_solve(field, nxt, plan, history)
        except NoConvergence as exc:
            step *= 0.5
            log.info("newton failed at sigma=%.6g (%s); step -> %.3g", nxt, exc, step)
            if step < plan.min_step:
                raise ContinuationError(
                    f"continuation stalled below sigma={sigma:.6g}", sigma, field
                ) from exc
            continue
        sigma = nxt
        entries.append(ContinuationEntry(sigma, len(history) - 1, history[-1]))
        step = min(2 * step, plan.step)
    return ContinuationResult(field, sigma, entries, history)


def construct_initial(r, eps, sigma0=0.9, n=2, N=200, plan=None, check=True):
    """Radial graph with H = sigma0 spanning the lifted boundary.

    sigma0 = 1 returns the horosphere without any Newton solve.  With
    ``check`` the two height bounds are enforced.
    """
    if sigma0 == 1.0:
        return horosphere(r, eps, n, N)
    if not -1 < sigma0 < 1:
        raise ValueError("sigma0 must lie in (-1, 1]")
    plan = plan or ContinuationPlan(sigma_target=sigma0)
    result = continuation(r, eps, plan, n, N)
    if check:
        for c in height_checks(result.field, r, eps, sigma0):
            if c.status == FAIL:
                raise RuntimeError(f"{c.check} violated: {c.measured:.6g} vs {c.bound:.6g}")
    return result.field


def write_continuation_log(path, entries):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["sigma", "iters", "final_residual"])
        for e in entries:
            out.writerow([repr(e.sigma), e.iters, repr(e.final_residual)])


# -- checks on the constructed surface --------------------------------------------

def _horizontal(field):
    """Signed horizontal coordinate (meridian) or radius (axisymmetric) per node."""
    rho, _ = embed(field)
    return rho


def boundary_distance(field, r):
    x = _horizontal(field)
    if field.grid.topology is Topology.MERIDIAN:
        xl, xr = _endpoints(r)
        return np.minimum(x - xl, xr - x)
    return float(r) - np.abs(x)


def diameter(field, r):
    if field.grid.topology is Topology.MERIDIAN:
        xl, xr = _endpoints(r)
        return xr - xl
    return 2.0 * float(r)


def height_checks(field, r, eps, sigma0):
    """Upper bound u < (d/2) k + eps everywhere and lower bound
    u >= dist(x, boundary) k + sigma0 eps / (1 + sigma0) at interior nodes,
    with k = sqrt((1 - sigma0)/(1 + sigma0))."""
    k = math.sqrt((1 - sigma0) / (1 + sigma0))
    u = field.u
    upper = diameter(field, r) / 2 * k + eps
    u_max = float(np.max(u))
    attained = u_max <= upper * (1 + 1e-12)
    inner = field.grid.interior
    lower = boundary_distance(field, r) * k + sigma0 * eps / (1 + sigma0)
    slack = (u - lower)[inner]
    worst = float(np.min(slack))
    return [
        # at sigma0 = 1 the bound is attained by the horosphere itself
        CheckResult("height_upper", PASS if u_max < upper or (k == 0 and attained) else FAIL,
                    u_max, upper),
        CheckResult("height_lower", PASS if worst >= 0 else FAIL, worst, 0.0,
                    "min over interior nodes of u - lower bound"),
    ]


def boundary_normal_report(field, sigma0):
    """e.nu_E at each Dirichlet node and its interior minimum, relative to sigma0."""
    geo = pointwise(field, endpoints=True)
    e_nu = geo.e_dot_nuE
    return {
        "boundary": [float(e_nu[i]) for i in field.grid.dirichlet],
        "interior_min": float(np.min(e_nu[field.grid.interior])),
        "sigma0": sigma0,
    }


def euclidean_curvature_sandwich(field, r, eps, sigma0):
    """H_E = (sigma0 - e.nu_E) / u at the boundary node against
    -sqrt(1-s^2)/r - eps(1-s)/r^2 < H_E < sqrt(1-s^2)/r + eps(1+s)/r^2."""
    geo = pointwise(field, endpoints=True)
    rad = diameter(field, r) / 2
    c = math.sqrt(1 - sigma0**2) / rad
    lower = -c - eps * (1 - sigma0) / rad**2
    upper = c + eps * (1 + sigma0) / rad**2
    out = []
    for i in field.grid.dirichlet:
        H_E = float((sigma0 - geo.e_dot_nuE[i]) / geo.u[i])
        ok = lower < H_E < upper
        out.append(CheckResult("euclidean_curvature_sandwich", PASS if ok else FAIL, H_E,
                               upper, f"lower={lower:.6g} node={int(i)}"))
    return out


def subharmonicity_report(field, sigma0, rel_slack=1e-3):
    """Soft: interior max of H_E should not exceed its boundary max.

    Only the maximum-principle consequence is tested, with a relative slack
    for discretization error (H_E is constant on a cap); WARN on violation.
    """
    geo = pointwise(field, endpoints=True)
    H_E = (sigma0 - geo.e_dot_nuE) / geo.u
    inner = float(np.max(H_E[field.grid.interior]))
    bnd = float(np.max(H_E[field.grid.dirichlet]))
    if not math.isfinite(inner):
        return CheckResult("euclidean_curvature_subharmonic", NA, None, bnd)
    bound = bnd + rel_slack * max(abs(bnd), 1.0)
    return CheckResult("euclidean_curvature_subharmonic", PASS if inner <= bound else WARN,
                       inner, bound)
