"""Energy, dissipation and trajectory checks for flow runs.

The energy of a radial graph is

    I(v) = int w y^{-n} dz + n sigma int v y^{-(n+1)} dz,

whose L^2 gradient flow is the radial-height equation, with
dI/dt = -n int (H - sigma)^2 dA and dA = w y^{-n} dz.  The quadrature is the
one whose discrete first variation is the conservative curvature: the area
term is a midpoint sum over cells, the volume term and the dissipation use
dual-cell weights around each node.

Every ``check_*`` function is a pure function of recorded data and returns a
:class:`CheckResult`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from .geometry import (density, dual_cell_weights, mean_curvature_conservative,
                       nodal_w, pointwise)

PASS, FAIL, WARN, NA = "pass", "fail", "warn", "n/a"


@dataclass
class DiagnosticsRecord:
    step: int
    t: float
    energy: float
    dissipation: float
    residual_sup: float
    w_max: float
    w_boundary: float
    G_max: float
    G_boundary: float
    u_max: float
    u_min_interior: float
    v_min: float
    v_max: float
    monotone_flag: float

    CSV_COLUMNS = (
        "step", "t", "energy", "dissipation", "residual_sup",
        "w_max", "G_max", "u_max", "v_min", "v_max",
    )

    def csv_row(self):
        return [repr(getattr(self, c)) if c != "step" else str(self.step) for c in self.CSV_COLUMNS]

    def as_dict(self):
        return asdict(self)


@dataclass
class CheckResult:
    check: str
    status: str
    measured: Optional[float] = None
    bound: Optional[float] = None
    detail: str = ""

    @property
    def ok(self):
        return self.status != FAIL

    def as_dict(self):
        return asdict(self)


def area_term(field):
    """int w y^{-n} dz by the composite midpoint rule on cells.

    Slopes are one-cell differences, so the discrete first variation of this
    sum is exactly the difference of the flux y^{-n} v'/w across dual cells.
    """
    grid = field.grid
    mid = 0.5 * (grid.theta[1:] + grid.theta[:-1])
    slope = np.diff(field.v) / grid.h
    integrand = np.sqrt(1.0 + slope**2) * np.cos(mid) ** -grid.n * density(grid, mid)
    return float(grid.h * np.sum(integrand))


def volume_term(field):
    """int v y^{-(n+1)} dz with the weight integrated exactly over dual cells."""
    grid = field.grid
    return float(np.sum(dual_cell_weights(grid, grid.n + 1) * field.v))


def energy(field, sigma):
    return area_term(field) + field.grid.n * sigma * volume_term(field)


def area(field):
    return area_term(field)


def dissipation(field, sigma):
    """n int (H - sigma)^2 dA over the evolved nodes, H the conservative curvature.

    Dirichlet nodes carry no weight: v_t vanishes there.
    """
    grid = field.grid
    n = grid.n
    g = mean_curvature_conservative(field) - sigma
    g[grid.dirichlet] = 0.0
    weight = n * dual_cell_weights(grid, n + 1) * grid.y
    return float(np.sum(weight * g**2 * nodal_w(field)))


def gradient_quantity(field, sigma, geo=None):
    """G = e^v (w + sigma (y + e.grad v)) per node."""
    geo = geo or pointwise(field, endpoints=True)
    return np.exp(field.v) * (geo.w + sigma * (field.grid.y + geo.e_dot_grad_v))


def record(field, sigma, t=0.0, step=0, residual_sup=float("nan"), monotone_flag=math.inf):
    grid = field.grid
    geo = pointwise(field, endpoints=True)
    G = gradient_quantity(field, sigma, geo)
    inner = grid.interior
    bnd = grid.dirichlet
    return DiagnosticsRecord(
        step=int(step),
        t=float(t),
        energy=energy(field, sigma),
        dissipation=dissipation(field, sigma),
        residual_sup=float(residual_sup),
        w_max=float(np.max(geo.w[inner])),
        w_boundary=float(np.max(geo.w[bnd])),
        G_max=float(np.max(G[inner])),
        G_boundary=float(np.max(G[bnd])),
        u_max=float(np.max(geo.u)),
        u_min_interior=float(np.min(geo.u[inner])),
        v_min=float(np.min(field.v)),
        v_max=float(np.max(field.v)),
        monotone_flag=float(monotone_flag),
    )


# -- trajectory checks ------------------------------------------------------

def check_energy_balance(records, step_tol=1e-10, rel_tol=0.05):
    """Energy descent at every recorded step and the integrated balance
    I(t) - I(0) + int_0^t D = 0, relative to the total drop.

    Returns ``(descent, balance)``.
    """
    E = np.array([r.energy for r in records])
    D = np.array([r.dissipation for r in records])
    t = np.array([r.t for r in records])
    rises = np.diff(E)
    worst = float(np.max(rises)) if rises.size else 0.0
    k = int(np.argmax(rises)) if rises.size else 0
    descent = CheckResult(
        "energy_descent", PASS if worst <= step_tol else FAIL, worst, step_tol,
        "" if worst <= step_tol else f"energy rose at step {records[k + 1].step}",
    )
    drop = E[-1] - E[0]
    dissipated = float(trapezoid(D, t)) if t.size > 1 else 0.0
    mismatch = abs(drop + dissipated)
    if abs(drop) < 1e-12:
        status = PASS if mismatch <= 1e-10 else FAIL
        rel = mismatch
    else:
        rel = mismatch / abs(drop)
        status = PASS if rel <= rel_tol else FAIL
    balance = CheckResult("energy_balance", status, rel, rel_tol,
                          f"drop={drop:.6e} dissipated={dissipated:.6e}")
    return descent, balance


def check_gradient_quantity(records, tol=1e-8):
    """Interior space-time max of G against its parabolic-boundary max."""
    interior = max(r.G_max for r in records[1:]) if len(records) > 1 else -math.inf
    parabolic = max([records[0].G_max, records[0].G_boundary] + [r.G_boundary for r in records])
    excess = interior - parabolic
    return CheckResult("gradient_quantity_max_principle", PASS if excess <= tol else FAIL,
                       excess, tol, f"interior={interior:.12g} parabolic={parabolic:.12g}")


def check_w_growth(records, slack=0.05):
    """max interior w(t) <= e^{3t} * parabolic-boundary max of w, with slack."""
    base = max([records[0].w_max, records[0].w_boundary] + [r.w_boundary for r in records])
    worst = max(r.w_max / (math.exp(3 * r.t) * base) for r in records)
    bound = 1.0 + slack
    return CheckResult("w_growth", PASS if worst <= bound else FAIL, worst, bound)


def check_monotone(records, initial_H_minus_sigma_min, tol=1e-10):
    """If H >= sigma initially, no node may ever move down."""
    if initial_H_minus_sigma_min < 0:
        return CheckResult("monotone", NA, initial_H_minus_sigma_min, 0.0,
                           "initial H < sigma somewhere; no claim")
    worst = min((r.monotone_flag for r in records), default=math.inf)
    return CheckResult("monotone", PASS if worst >= -tol else FAIL, worst, -tol)


def height_bound(r, eps, sigma):
    return r * math.sqrt((1 - sigma) / (1 + sigma)) + eps


def check_height_bound(records, r, eps, sigma):
    """u < (d(D)/2) sqrt((1-sigma)/(1+sigma)) + eps with d(D) = 2r, strictly."""
    bound = height_bound(r, eps, sigma)
    u = max(rec.u_max for rec in records)
    return CheckResult("height_bound", PASS if u < bound else FAIL, u, bound,
                       f"slack={bound - u:.6e}")


def check_barrier_containment(fields, sphere, side, tol=1e-9):
    """Signed distance to ``sphere`` keeps its declared sign along the run.

    ``fields`` are HeightFields (or (step, t, field) tuples); ``side`` is
    ``inside`` or ``outside``.
    """
    worst = -math.inf
    for item in fields:
        f = item[-1] if isinstance(item, tuple) else item
        dmin, dmax = sphere.distance_range(f)
        if side == "inside":
            worst = max(worst, float(np.max(dmax - sphere.R)))
        elif side == "outside":
            worst = max(worst, float(np.max(sphere.R - dmin)))
        else:
            raise ValueError(f"side must be 'inside' or 'outside', got {side!r}")
    return CheckResult(f"barrier_{side}", PASS if worst <= tol else FAIL, worst, tol)


def boundary_asymptotics_fit(field, eta, fraction=0.25, exclude=3, min_points=6,
                             threshold=1.9, end="right", noise=1e-13):
    """Exponent p in |v - eta| ~ dist^p near a Dirichlet end.

    Least squares on log|v - eta| against log(angular distance to the
    boundary node) over the nearest ``fraction`` of the nodes, skipping the
    ``exclude`` nodes closest to the boundary.  Soft check: WARN below
    ``threshold``.
    """
    theta = field.grid.theta
    diff = np.abs(np.asarray(field.v) - np.asarray(eta))
    m = int(fraction * theta.size)
    if end == "right":
        idx = np.arange(theta.size - 1 - m, theta.size - 1 - exclude)
        dist = theta[-1] - theta[idx]
    else:
        idx = np.arange(1 + exclude, 1 + m)
        dist = theta[idx] - theta[0]
    if idx.size < min_points:
        return CheckResult("boundary_asymptotics", NA, None, threshold,
                           f"window too small ({idx.size} < {min_points} points)")
    d = diff[idx]
    if np.max(d) < noise:
        return CheckResult("boundary_asymptotics", NA, None, threshold,
                           "difference below noise floor; fit skipped")
    keep = d > 0
    slope = float(np.polyfit(np.log(dist[keep]), np.log(d[keep]), 1)[0])
    return CheckResult("boundary_asymptotics", PASS if slope >= threshold else WARN,
                       slope, threshold)


def divergence_identity_error(field):
    """Max mismatch between div(y^{-n} grad v / w) and n H y^{-(n+1)}.

    Both sides are weighted by the measure density; the divergence is a
    centered difference of the flux at half nodes.  Evaluated on nodes whose
    stencil stays inside the grid.
    """
    grid = field.grid
    n = grid.n
    th = grid.theta
    h = grid.h
    v = field.v
    half = 0.5 * (th[1:] + th[:-1])
    vt_half = np.diff(v) / h
    y_half = np.cos(half)
    dens_half = density(grid, half)
    flux = dens_half * y_half**-n * vt_half / np.sqrt(1 + vt_half**2)
    div = np.diff(flux) / h
    H = pointwise(field, endpoints=False).H
    target = n * H * grid.y ** -(n + 1) * grid.measure()
    sl = slice(1, grid.size - 1)
    return float(np.max(np.abs(div - target[sl])))
