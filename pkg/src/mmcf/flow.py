"""Time stepping of the regularized Dirichlet problem for the radial height.

    v_t = y w (H - sigma)
        = (y^2/n) (v_tt / w^2 + (n-1) cot(t) v_t) + y sin(t) v_t - sigma y w

on the lifted domain, with v fixed to its boundary value at Dirichlet nodes.

Two spatial discretizations are available.  ``central`` evaluates the
reduced formula with central stencils.  ``conservative`` (the default) uses
H from the dual-cell divergence form, which is the exact first variation of
the discrete energy in :mod:`diagnostics`; the semi-discrete flow is then a
gradient flow of that energy and the lagged-diffusivity implicit step
decreases it at every step for any dt.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from . import diagnostics
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
    mean_curvature,
    mean_curvature_conservative,
    meridian_grid,
    nodal_w,
)

log = logging.getLogger(__name__)

# nodes next to each Dirichlet node ignored by the stationarity measure early on
BOUNDARY_LAYER_NODES = 2
BOUNDARY_LAYER_STEPS = 10


class ConfigError(ValueError):
    """Invalid run parameter; the message names the offending key."""


class CFLError(ValueError):
    pass


class FlowDivergedError(RuntimeError):
    """Non-finite values appeared; ``last_good`` holds the previous state."""

    def __init__(self, message, last_good):
        super().__init__(message)
        self.last_good = last_good


class SingularSystemError(RuntimeError):
    def __init__(self, message, dump):
        super().__init__(message)
        self.dump = dump


class Scheme(str, Enum):
    EXPLICIT_RK2 = "explicit_rk2"
    SEMI_IMPLICIT = "semi_implicit"


class Status(str, Enum):
    CONVERGED = "converged"
    TIMED_OUT = "timed_out"


@dataclass(frozen=True)
class FlowConfig:
    """Parameters of one flow run.

    ``r`` is the radius of the circular boundary (axisymmetric, n >= 2) or a
    pair ``(x_left, x_right)`` of boundary abscissae (meridian, n = 1).
    Exactly one of ``dt`` and ``cfl_safety`` selects the time step.
    """

    sigma: float
    eps: float
    r: object = 1.0
    n: int = 2
    N: int = 200
    scheme: Scheme = Scheme.SEMI_IMPLICIT
    dt: Optional[float] = 1e-3
    cfl_safety: Optional[float] = None
    t_max: float = 50.0
    residual_tol: float = 1e-6
    diag_every: int = 1
    discretization: Discretization = Discretization.CONSERVATIVE

    def __post_init__(self):
        try:
            object.__setattr__(self, "scheme", Scheme(self.scheme))
        except ValueError:
            raise ConfigError(f"scheme: unknown value {self.scheme!r}") from None
        try:
            object.__setattr__(self, "discretization", Discretization(self.discretization))
        except ValueError:
            raise ConfigError(f"discretization: unknown value {self.discretization!r}") from None
        if not -1 < self.sigma < 1:
            raise ConfigError("sigma out of (-1,1)")
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.N < 5:
            raise ConfigError("N must be >= 5")
        if self.n == 1:
            try:
                xl, xr = self.r
            except TypeError:
                xl, xr = -float(self.r), float(self.r)
            if not xl < 0 < xr:
                raise ConfigError("r endpoints must satisfy x_left < 0 < x_right")
            object.__setattr__(self, "r", (float(xl), float(xr)))
        elif not float(self.r) > 0:
            raise ConfigError("r must be > 0")
        if (self.dt is None) == (self.cfl_safety is None):
            raise ConfigError("dt: give exactly one of dt and cfl_safety")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.cfl_safety is not None and not 0 < self.cfl_safety <= 1:
            raise ConfigError("cfl_safety must lie in (0,1]")
        if self.t_max < 0:
            raise ConfigError("t_max must be >= 0")
        if not self.residual_tol > 0:
            raise ConfigError("residual_tol must be > 0")
        if self.diag_every < 1:
            raise ConfigError("diag_every must be >= 1")

    def grid(self):
        if self.n == 1:
            xl, xr = self.r
            return meridian_grid(math.atan2(xl, self.eps), math.atan2(xr, self.eps), self.N)
        theta_b, _ = boundary_angle(float(self.r), self.eps)
        return axisymmetric_grid(self.n, theta_b, self.N)

    def boundary_values(self):
        """Dirichlet values phi^eps at the grid's Dirichlet nodes, in node order."""
        if self.n == 1:
            return np.array([0.5 * math.log(x * x + self.eps**2) for x in self.r])
        return np.array([boundary_angle(float(self.r), self.eps)[1]])

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class FlowState:
    t: float
    field: HeightField
    step_count: int = 0
    last_diagnostics: Optional[diagnostics.DiagnosticsRecord] = None


@dataclass
class RunResult:
    status: Status
    state: FlowState
    records: list
    fields: list = dc_field(default_factory=list)  # (step, t, HeightField) pairs
    config: Optional[FlowConfig] = None

    @property
    def field(self):
        return self.state.field


# -- spatial operator ------------------------------------------------------------

_CONSERVATIVE = Discretization.CONSERVATIVE


def rhs(field, sigma, discretization=_CONSERVATIVE):
    """v_t of the flow; zero at Dirichlet nodes.

    Central: the reduced formula.  Conservative: the assembled linear form
    (flux differences minus the volume source) over the nodal mass.
    """
    grid = field.grid
    if Discretization(discretization) is _CONSERVATIVE:
        c, M, g = _conservative_operator(field, sigma)
        v = field.v
        flux = c * np.diff(v)
        net = np.concatenate((flux, [0.0])) - np.concatenate(([0.0], flux))
        out = (net - g) / M
        out[grid.dirichlet] = 0.0
        return out
    n = grid.n
    vt, vtt = derivatives(field)
    y = grid.y
    w = np.sqrt(1.0 + vt**2)
    a_op = vtt / w**2 + (n - 1) * cot_times(grid, vt, vtt)
    out = y**2 * a_op / n + y * np.sin(grid.theta) * vt - sigma * y * w
    out[grid.dirichlet] = 0.0
    return out


def rhs_from_curvature(field, sigma, discretization=_CONSERVATIVE):
    """y w (H - sigma) via the curvature functions; second route to :func:`rhs`."""
    grid = field.grid
    if Discretization(discretization) is _CONSERVATIVE:
        H = mean_curvature_conservative(field)
    else:
        H = mean_curvature(field)
    out = grid.y * nodal_w(field) * (H - sigma)
    out[grid.dirichlet] = 0.0
    return out


def check_rhs(field, sigma, rtol=1e-12, discretization=_CONSERVATIVE):
    a = rhs(field, sigma, discretization)
    b = rhs_from_curvature(field, sigma, discretization)
    scale = max(1.0, float(np.max(np.abs(a))))
    err = float(np.max(np.abs(a - b)))
    if err > rtol * scale:
        raise AssertionError(f"rhs routes disagree by {err:.3e}")
    return err


def _conservative_operator(field, sigma):
    """Frozen conductances c (half nodes), nodal masses M and sources g.

    The conservative flow reads M_i v_t = c_{i+1/2}(v_{i+1} - v_i)
    - c_{i-1/2}(v_i - v_{i-1}) - g_i, with zero conductance through the pole.
    """
    grid = field.grid
    n = grid.n
    h = grid.h
    mid = 0.5 * (grid.theta[1:] + grid.theta[:-1])
    slope = np.diff(field.v) / h
    c = density(grid, mid) * np.cos(mid) ** -n / (h * np.sqrt(1.0 + slope**2))
    weight = n * dual_cell_weights(grid, n + 1)
    M = weight / (grid.y * nodal_w(field))
    return c, M, sigma * weight


def _coefficients(field, sigma):
    """Frozen coefficients (a, b, s) with v_t = a v_tt + b v_t + s at each node.

    At the axisymmetric pole cot(t) v_t -> v_tt is folded into ``a``.
    """
    grid = field.grid
    n = grid.n
    vt, _ = derivatives(field)
    y = grid.y
    w = np.sqrt(1.0 + vt**2)
    a = y**2 / (n * w**2)
    b = y * np.sin(grid.theta) * np.ones_like(y)
    if n > 1:
        cot = np.zeros_like(y)
        cot[1:] = 1.0 / np.tan(grid.theta[1:])
        b = b + y**2 * (n - 1) * cot / n
        if grid.topology is Topology.AXISYMMETRIC:
            a[0] = y[0] ** 2 * (1.0 / w[0] ** 2 + (n - 1)) / n
            b[0] = 0.0
    s = -sigma * y * w
    return a, b, s


def diffusion_max(field, sigma=0.0, discretization=_CONSERVATIVE):
    """Largest effective coefficient of v_tt over evolved nodes, pole included.

    For the conservative operator this is h^2 (c_- + c_+) / (2 M), the
    coefficient whose central three-point stencil has the same row sum.
    """
    grid = field.grid
    if Discretization(discretization) is _CONSERVATIVE:
        c, M, _ = _conservative_operator(field, sigma)
        cc = np.concatenate(([0.0], c)) + np.concatenate((c, [0.0]))
        a = grid.h**2 * cc / (2.0 * M)
    else:
        a, _, _ = _coefficients(field, sigma)
    return float(np.max(a[grid.interior]))


def cfl_dt(field, safety, discretization=_CONSERVATIVE):
    """Largest stable explicit step times ``safety``: safety * h^2 / (2 max a)."""
    return safety * field.grid.h ** 2 / (2.0 * diffusion_max(field, 0.0, discretization))


# -- time steppers ---------------------------------------------------------------

def _finite_or_raise(state, v):
    if not np.all(np.isfinite(v)):
        raise FlowDivergedError(
            f"non-finite radial height after step {state.step_count + 1}", last_good=state
        )


def step_explicit(state, dt, sigma, check_cfl=True, discretization=_CONSERVATIVE):
    """Heun (two-stage RK2) step; Dirichlet nodes are left untouched."""
    f0 = state.field
    if check_cfl:
        limit = cfl_dt(f0, 1.0, discretization)
        if dt > limit:
            raise CFLError(f"dt={dt:.3e} exceeds explicit stability limit {limit:.3e}")
    k1 = rhs(f0, sigma, discretization)
    v1 = f0.v + dt * k1
    _finite_or_raise(state, v1)
    k2 = rhs(f0.with_values(v1), sigma, discretization)
    v = f0.v + 0.5 * dt * (k1 + k2)
    _finite_or_raise(state, v)
    return FlowState(state.t + dt, f0.with_values(v), state.step_count + 1)


def semi_implicit_dt_bound(field, sigma, discretization=_CONSERVATIVE):
    """Largest dt for which the implicit matrix stays diagonally dominant.

    The conservative matrix is an M-matrix for every dt, so the bound is inf.
    """
    if Discretization(discretization) is _CONSERVATIVE:
        return math.inf
    h = field.grid.h
    a, b, _ = _coefficients(field, sigma)
    excess = (np.abs(b) / h - 2 * a / h**2)[field.grid.interior]
    worst = float(np.max(excess))
    return math.inf if worst <= 0 else 1.0 / worst


def _conservative_banded_system(field, dt, sigma):
    """Lagged-diffusivity system: conductances and masses frozen at ``field``.

    The step is the exact minimizer of a convex quadratic majorant of the
    discrete energy plus a mass-weighted proximity term, so the energy
    cannot increase.
    """
    grid = field.grid
    N = grid.size
    c, M, g = _conservative_operator(field, sigma)
    ab = np.zeros((3, N))
    ab[1] = M / dt
    ab[1, :-1] += c
    ab[1, 1:] += c
    ab[0, 1:] = -c
    ab[2, :-1] = -c
    rhs_vec = M * field.v / dt - g
    for k in grid.dirichlet:
        ab[1, k] = 1.0
        if k + 1 < N:
            ab[0, k + 1] = 0.0
        if k - 1 >= 0:
            ab[2, k - 1] = 0.0
        rhs_vec[k] = field.v[k]
    return ab, rhs_vec


def _banded_system(field, dt, sigma):
    grid = field.grid
    N = grid.size
    h = grid.h
    a, b, s = _coefficients(field, sigma)
    lower = dt * (a / h**2 - b / (2 * h))
    upper = dt * (a / h**2 + b / (2 * h))
    ab = np.zeros((3, N))
    ab[1] = 1.0 + 2 * dt * a / h**2
    ab[0, 1:] = -upper[:-1]
    ab[2, :-1] = -lower[1:]
    rhs_vec = field.v + dt * s
    if grid.topology is Topology.AXISYMMETRIC:
        # ghost v[-1] = v[1]: both neighbours of the pole are node 1
        ab[0, 1] = -2 * dt * a[0] / h**2
    for k in grid.dirichlet:
        ab[1, k] = 1.0
        if k + 1 < N:
            ab[0, k + 1] = 0.0
        if k - 1 >= 0:
            ab[2, k - 1] = 0.0
        rhs_vec[k] = field.v[k]
    return ab, rhs_vec


def step_semi_implicit(state, dt, sigma, check_dominance=True, discretization=_CONSERVATIVE):
    """Linearly implicit step with coefficients frozen at the current field.

    Central: second- and first-derivative terms implicit, -sigma y w explicit.
    Conservative: flux differences implicit with lagged 1/w, source explicit.
    """
    f0 = state.field
    if Discretization(discretization) is _CONSERVATIVE:
        ab, b = _conservative_banded_system(f0, dt, sigma)
    else:
        if check_dominance:
            bound = semi_implicit_dt_bound(f0, sigma, discretization)
            assert dt <= bound, f"dt={dt:.3e} breaks diagonal dominance (bound {bound:.3e})"
        ab, b = _banded_system(f0, dt, sigma)
    try:
        v = solve_banded((1, 1), ab, b, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"tridiagonal solve failed at step {state.step_count + 1}",
            dump={"t": state.t, "v": f0.v.tolist(), "diag": ab[1].tolist()},
        ) from exc
    _finite_or_raise(state, v)
    return FlowState(state.t + dt, f0.with_values(v), state.step_count + 1)


# -- driver ------------------------------------------------------------------------

def stationarity_residual(field, sigma, step_count=0, discretization=_CONSERVATIVE):
    """sup |y w (H - sigma)| over evolved nodes, masking the corner layer early on."""
    speed = np.abs(rhs(field, sigma, discretization))
    if step_count < BOUNDARY_LAYER_STEPS:
        for k in field.grid.dirichlet:
            lo, hi = max(k - BOUNDARY_LAYER_NODES, 0), k + BOUNDARY_LAYER_NODES + 1
            speed[lo:hi] = 0.0
    return float(np.max(speed))


def _check_boundary(config, v0):
    grid = v0.grid
    phi = config.boundary_values()
    if not np.allclose(v0.v[grid.dirichlet], phi, rtol=0, atol=1e-12):
        raise ConfigError(
            f"initial field violates the boundary condition: {v0.v[grid.dirichlet]} vs {phi}"
        )


def run_to_stationarity(config, v0, keep_fields_every=0, max_steps=None, observers=()):
    """Evolve ``v0`` until sup|y w (H - sigma)| < residual_tol or t >= t_max.

    A diagnostics row is recorded every ``diag_every`` steps and at the end.
    With ``keep_fields_every = k > 0`` every k-th recorded field is kept.
    ``observers`` are called with each recorded :class:`FlowState`.
    """
    _check_boundary(config, v0)
    sigma = config.sigma
    disc = config.discretization
    dt = config.dt if config.dt is not None else cfl_dt(v0, config.cfl_safety, disc)
    if config.scheme is Scheme.EXPLICIT_RK2:
        limit = cfl_dt(v0, 1.0, disc)
        if config.dt is not None and dt > limit:
            raise CFLError(f"dt={dt:.3e} exceeds explicit stability limit {limit:.3e}")

        def advance(st):
            return step_explicit(st, dt, sigma, check_cfl=False, discretization=disc)
    else:
        bound = semi_implicit_dt_bound(v0, sigma, disc)
        if dt > bound:
            raise ConfigError(f"dt={dt:.3e} breaks diagonal dominance (bound {bound:.3e})")

        def advance(st):
            return step_semi_implicit(st, dt, sigma, check_dominance=False, discretization=disc)

    state = FlowState(0.0, v0, 0)
    records = []
    fields = []
    n_recorded = 0
    min_increment = math.inf

    def record(st, residual):
        nonlocal n_recorded, min_increment
        rec = diagnostics.record(
            st.field, sigma, t=st.t, step=st.step_count, residual_sup=residual,
            monotone_flag=min_increment,
        )
        st.last_diagnostics = rec
        records.append(rec)
        if keep_fields_every and n_recorded % keep_fields_every == 0:
            fields.append((st.step_count, st.t, st.field))
        n_recorded += 1
        min_increment = math.inf
        for obs in observers:
            obs(st)

    residual = stationarity_residual(state.field, sigma, 0, disc)
    record(state, residual)
    eps_t = 1e-12 * max(1.0, config.t_max)
    while True:
        if residual < config.residual_tol:
            status = Status.CONVERGED
            break
        if state.t >= config.t_max - eps_t or (max_steps is not None and state.step_count >= max_steps):
            status = Status.TIMED_OUT
            break
        new = advance(state)
        min_increment = min(min_increment, float(np.min(new.field.v - state.field.v)))
        state = new
        residual = stationarity_residual(state.field, sigma, state.step_count, disc)
        if state.step_count % config.diag_every == 0:
            record(state, residual)
    if records[-1].step != state.step_count:
        record(state, residual)
    elif keep_fields_every and fields[-1][0] != state.step_count:
        fields.append((state.step_count, state.t, state.field))
    log.info("run finished: %s at t=%.4g after %d steps, residual %.3e",
             status.value, state.t, state.step_count, residual)
    return RunResult(status, state, records, fields, config)


def epsilon_continuation(base_config, eps_list, initial="cmc", sigma0=0.9, jobs=1):
    """Stationary runs for decreasing eps with an eps-uniformity report.

    Returns ``(results, report)`` where ``results`` maps eps to RunResult and
    the report carries per-eps max w, sup differences of consecutive limits on
    the angular window common to all grids, and their ratios.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("eps list is empty")
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing and positive")
    configs = [base_config.with_(eps=e) for e in eps_list]
    tasks = [(c, initial, sigma0) for c in configs]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_continuation_run, tasks))
    else:
        outs = [_continuation_run(t) for t in tasks]
    results = dict(zip(eps_list, outs))
    return results, uniformity_report(results)


def initial_field(config, kind="cmc", sigma0=0.9, bump=0.05):
    """Initial radial height for ``config``.

    kinds: ``cap`` (exact stationary solution), ``perturbed_cap`` (cap plus a
    boundary-vanishing cosine bump), ``cmc`` (constant H = sigma0 surface from
    continuation), ``hemisphere`` (sigma = 0 cap plus the bump).
    """
    from . import cmc, exact

    grid = config.grid()
    if config.n == 1:
        xl, xr = config.r
        sphere = exact.meridian_sphere(xl, xr, config.sigma, config.eps)
        cap = exact.sphere_field(sphere, grid)
        half = 0.5 * (grid.theta[-1] - grid.theta[0])
        mid = 0.5 * (grid.theta[-1] + grid.theta[0])
        profile = np.cos(0.5 * math.pi * (grid.theta - mid) / half)
    else:
        cap = exact.boundary_cap(float(config.r), config.sigma, config.eps, grid)
        profile = np.cos(0.5 * math.pi * grid.theta / grid.theta[-1])
    profile[grid.dirichlet] = 0.0
    if kind == "cap":
        return cap
    if kind == "perturbed_cap":
        return cap.with_values(cap.v + bump * profile)
    if kind == "hemisphere":
        base = config.with_(sigma=0.0)
        return initial_field(base, "perturbed_cap", bump=bump)
    if kind == "cmc":
        plan = None
        if sigma0 < 1:
            plan = cmc.ContinuationPlan(sigma_target=sigma0, discretization=config.discretization)
        return cmc.construct_initial(config.r, config.eps, sigma0, config.n, config.N, plan)
    raise ConfigError(f"initial: unknown kind {kind!r}")


def _continuation_run(task):
    config, initial, sigma0 = task
    return run_to_stationarity(config, initial_field(config, initial, sigma0))


def uniformity_report(results):
    eps_sorted = sorted(results, reverse=True)
    w_max = {e: max(r.records[i].w_max for i in range(len(r.records))) for e, r in results.items()}
    window = min(results[e].field.grid.theta[-1] for e in eps_sorted)
    diffs = []
    for e1, e2 in zip(eps_sorted, eps_sorted[1:]):
        diffs.append(_window_sup_diff(results[e1].field, results[e2].field, window))
    ratios = [b / a for a, b in zip(diffs, diffs[1:]) if a > 0]
    statuses = {e: r.status.value for e, r in results.items()}
    return {
        "eps": eps_sorted,
        "status": [statuses[e] for e in eps_sorted],
        "partial": any(s != Status.CONVERGED.value for s in statuses.values()),
        "w_max": [w_max[e] for e in eps_sorted],
        "w_spread": max(w_max.values()) / min(w_max.values()),
        "window": window,
        "sup_diffs": diffs,
        "ratios": ratios,
    }


def _window_sup_diff(f1, f2, window):
    from scipy.interpolate import CubicSpline

    lo = max(f1.grid.theta[0], f2.grid.theta[0], -window)
    ts = np.linspace(lo, window, 401)
    s1 = CubicSpline(f1.grid.theta, f1.v)(ts)
    s2 = CubicSpline(f2.grid.theta, f2.v)(ts)
    return float(np.max(np.abs(s1 - s2)))
