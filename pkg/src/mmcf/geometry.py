"""Radial graphs over the upper hemisphere in the half-space model.

A hypersurface is the radial graph ``X = exp(v(z)) z`` over a subdomain of
the unit hemisphere.  Only one angular variable is discretized:

* ``Topology.AXISYMMETRIC`` (n >= 2): polar angle theta in [0, theta_b],
  the pole sits at theta = 0 and the surface is a surface of revolution.
* ``Topology.MERIDIAN`` (n = 1): a plane curve, angle alpha in
  [alpha_left, alpha_right] measured from the vertical, Dirichlet at both ends.

In both cases ``y = cos(angle)`` is the height of z above the ideal boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

MIN_NODES = 5


class GridError(ValueError):
    """Raised for malformed grids or fields."""


class Topology(str, Enum):
    AXISYMMETRIC = "axisymmetric"
    MERIDIAN = "meridian"


def _readonly(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MeridianGrid:
    n: int
    topology: Topology
    theta: np.ndarray

    def __post_init__(self):
        theta = _readonly(self.theta)
        object.__setattr__(self, "theta", theta)
        topology = Topology(self.topology)
        object.__setattr__(self, "topology", topology)
        if theta.ndim != 1 or theta.size < 2:
            raise GridError("theta must be a 1-D array of node angles")
        steps = np.diff(theta)
        if np.any(steps <= 0):
            raise GridError("theta must be strictly increasing")
        h = (theta[-1] - theta[0]) / (theta.size - 1)
        if np.max(np.abs(steps - h)) > 1e-12 * h:
            raise GridError("theta must be uniformly spaced")
        if topology is Topology.AXISYMMETRIC:
            if self.n < 2:
                raise GridError("axisymmetric grids require n >= 2")
            if theta[0] != 0.0:
                raise GridError("axisymmetric grids start at the pole theta = 0")
            if not 0.0 < theta[-1] < math.pi / 2:
                raise GridError("theta_b must lie in (0, pi/2)")
        else:
            if self.n != 1:
                raise GridError("meridian grids require n = 1")
            if not (-math.pi / 2 < theta[0] and theta[-1] < math.pi / 2):
                raise GridError("meridian endpoints must lie in (-pi/2, pi/2)")

    @property
    def size(self):
        return self.theta.size

    @property
    def h(self):
        return float((self.theta[-1] - self.theta[0]) / (self.theta.size - 1))

    @property
    def y(self):
        return np.cos(self.theta)

    @property
    def interior(self):
        """Slice of evolved nodes.  The pole is evolved, Dirichlet ends are not."""
        if self.topology is Topology.AXISYMMETRIC:
            return slice(0, self.size - 1)
        return slice(1, self.size - 1)

    @property
    def dirichlet(self):
        if self.topology is Topology.AXISYMMETRIC:
            return np.array([self.size - 1])
        return np.array([0, self.size - 1])

    def measure(self):
        """Density of dz with respect to d(theta): |S^{n-1}| sin^{n-1}(theta), or 1."""
        if self.topology is Topology.MERIDIAN:
            return np.ones(self.size)
        n = self.n
        sphere_area = 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)
        return sphere_area * np.sin(self.theta) ** (n - 1)


def axisymmetric_grid(n, theta_b, N):
    """Uniform polar grid with N nodes on [0, theta_b]."""
    return MeridianGrid(n, Topology.AXISYMMETRIC, np.linspace(0.0, theta_b, N))


def meridian_grid(alpha_left, alpha_right, N):
    return MeridianGrid(1, Topology.MERIDIAN, np.linspace(alpha_left, alpha_right, N))


@dataclass(frozen=True, eq=False)
class HeightField:
    grid: MeridianGrid
    v: np.ndarray

    def __post_init__(self):
        v = _readonly(self.v)
        if v.shape != self.grid.theta.shape:
            raise GridError(f"field has {v.size} values for {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            raise GridError("radial height must be finite at every node")
        object.__setattr__(self, "v", v)

    def with_values(self, v):
        return HeightField(self.grid, v)

    @property
    def u(self):
        """Euclidean height of the surface point, y * exp(v)."""
        return self.grid.y * np.exp(self.v)


# -- finite differences ----------------------------------------------------

def derivatives(field, endpoints=False):
    """Central-difference v_theta and v_thetatheta at every node.

    The axisymmetric pole uses the even ghost node v[-1] = v[1].  Dirichlet
    end nodes are filled with second-order one-sided stencils when
    ``endpoints`` is true and left as NaN otherwise; the flow never reads them.
    """
    grid = field.grid
    if grid.size < MIN_NODES:
        raise GridError(f"need at least {MIN_NODES} nodes, got {grid.size}")
    v = field.v
    h = grid.h
    d1 = np.full(v.shape, np.nan)
    d2 = np.full(v.shape, np.nan)
    d1[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    d2[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    if grid.topology is Topology.AXISYMMETRIC:
        d1[0] = 0.0
        d2[0] = 2 * (v[1] - v[0]) / h**2
    elif endpoints:
        d1[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
        d2[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h**2
    if endpoints:
        d1[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
        d2[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2
    return d1, d2


def cot_times(grid, vt, vtt):
    """cot(theta) * v_theta with the pole limit v_thetatheta(0)."""
    out = np.zeros_like(vt)
    if grid.topology is Topology.MERIDIAN:
        return out
    th = grid.theta
    out[1:] = vt[1:] / np.tan(th[1:])
    out[0] = vtt[0]
    return out


@dataclass(frozen=True, eq=False)
class PointwiseGeometry:
    """Per-node differential geometry of a radial graph."""

    v_theta: np.ndarray
    v_thetatheta: np.ndarray
    w: np.ndarray
    e_dot_grad_v: np.ndarray
    a_op: np.ndarray
    H: np.ndarray
    u: np.ndarray
    e_dot_nuE: np.ndarray


def pointwise(field, endpoints=True):
    grid = field.grid
    n = grid.n
    vt, vtt = derivatives(field, endpoints=endpoints)
    y = grid.y
    w = np.sqrt(1.0 + vt**2)
    e_grad = -np.sin(grid.theta) * vt
    a_op = vtt / w**2 + (n - 1) * cot_times(grid, vt, vtt)
    H = y * a_op / (n * w) - e_grad / w
    return PointwiseGeometry(
        v_theta=vt,
        v_thetatheta=vtt,
        w=w,
        e_dot_grad_v=e_grad,
        a_op=a_op,
        H=H,
        u=y * np.exp(field.v),
        e_dot_nuE=(y - e_grad) / w,
    )


def mean_curvature(field, endpoints=False):
    """Hyperbolic mean curvature (outward normal) at every node.

    Dirichlet nodes are NaN unless ``endpoints`` requests one-sided stencils.
    """
    return pointwise(field, endpoints=endpoints).H


def mean_curvature_via_euclidean(field, endpoints=False):
    """Same quantity through H = u H_E + e.nu_E with H_E = (a_op - n)/(n e^v w)."""
    geo = pointwise(field, endpoints=endpoints)
    n = field.grid.n
    ev = np.exp(field.v)
    H_E = (geo.a_op - n) / (n * ev * geo.w)
    return geo.u * H_E + geo.e_dot_nuE


def embed(field):
    """Half-plane profile (rho, x_{n+1}) = e^v (sin theta, cos theta)."""
    ev = np.exp(field.v)
    return ev * np.sin(field.grid.theta), ev * np.cos(field.grid.theta)


def boundary_angle(r, eps):
    """Angle of the lifted boundary point (r, eps) and its radial height.

    Returns ``(theta_b, phi)`` with tan(theta_b) = r/eps and
    phi = log sqrt(r^2 + eps^2).
    """
    if r <= 0:
        raise ValueError("boundary radius must be positive")
    if eps < 0:
        raise ValueError("lift height must be non-negative")
    return math.atan2(r, eps), 0.5 * math.log(r * r + eps * eps)


class Discretization(str, Enum):
    """Spatial discretization of the curvature operator inside solvers.

    ``central``: pointwise reduced formula with central stencils.
    ``conservative``: divergence form, the exact first variation of the
    discrete energy (see :func:`mean_curvature_conservative`).
    """

    CENTRAL = "central"
    CONSERVATIVE = "conservative"


# -- conservative (divergence-form) operators ---------------------------------

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(8)


def density(grid, theta):
    """Density of dz w.r.t. d(theta) at arbitrary angles."""
    theta = np.asarray(theta, dtype=float)
    if grid.topology is Topology.MERIDIAN:
        return np.ones_like(theta)
    n = grid.n
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2) * np.sin(theta) ** (n - 1)


def dual_cell_weights(grid, power=0):
    """Integral of y^{-power} dz over [theta_i - h/2, theta_i + h/2] clipped to the domain."""
    th = grid.theta
    h = grid.h
    lo = np.maximum(th - h / 2, th[0])
    hi = np.minimum(th + h / 2, th[-1])
    mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
    pts = mid[:, None] + rad[:, None] * _GAUSS_X[None, :]
    return rad * ((density(grid, pts) * np.cos(pts) ** -power) @ _GAUSS_W)


def half_node_flux(field):
    """dens y^{-n} v'/w at cell midpoints, v' = (v[i+1] - v[i]) / h."""
    grid = field.grid
    mid = 0.5 * (grid.theta[1:] + grid.theta[:-1])
    slope = np.diff(field.v) / grid.h
    return density(grid, mid) * np.cos(mid) ** -grid.n * slope / np.sqrt(1.0 + slope**2)


def mean_curvature_conservative(field):
    """H from div(y^{-n} grad v / w) = n H y^{-(n+1)} integrated over dual cells.

    Zero flux through the pole; NaN at Dirichlet nodes.
    """
    grid = field.grid
    if grid.size < MIN_NODES:
        raise GridError(f"need at least {MIN_NODES} nodes, got {grid.size}")
    flux = np.concatenate(([0.0], half_node_flux(field), [0.0]))
    net = flux[1:] - flux[:-1]
    H = net / (grid.n * dual_cell_weights(grid, grid.n + 1))
    H[grid.dirichlet] = np.nan
    return H


def nodal_w(field):
    """sqrt(1 + v_theta^2) with central v_theta; 1 at the pole."""
    vt, _ = derivatives(field)
    w = np.sqrt(1.0 + vt**2)
    w[np.isnan(w)] = 1.0
    return w


def discrete_mean_curvature(field, discretization):
    if Discretization(discretization) is Discretization.CENTRAL:
        return mean_curvature(field)
    return mean_curvature_conservative(field)


# -- independent curvature oracle ----------------------------------------

def profile_curvature(rho, x, rho_t, x_t, rho_tt, x_tt, n):
    """Hyperbolic mean curvature of a curve of revolution from its parametrization.

    The profile (rho(t), x(t)) is rotated about the vertical axis (n >= 2) or
    taken as a plane curve (n = 1).  Principal curvatures are computed in the
    Euclidean metric w.r.t. the normal pointing away from the origin and
    converted with kappa_H = e.nu_E + x kappa_E.  Independent of the radial
    reduction used by :func:`mean_curvature`.
    """
    speed = np.hypot(rho_t, x_t)
    nu_rho = -x_t / speed
    nu_x = rho_t / speed
    k_meridian = (rho_t * x_tt - x_t * rho_tt) / speed**3
    k_total = k_meridian.copy()
    if n > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            k_parallel = np.where(rho > 0, -nu_rho / rho, k_meridian)
        k_total = k_meridian + (n - 1) * k_parallel
    return nu_x + x * k_total / n


# -- snapshot I/O ------------------------------------------------------------

def snapshot_dict(field):
    return {
        "n": field.grid.n,
        "topology": field.grid.topology.value,
        "theta": [float(t) for t in field.grid.theta],
        "v": [float(x) for x in field.v],
    }


def save_snapshot(field, path):
    # repr of a Python float round-trips exactly (17 significant digits max)
    Path(path).write_text(json.dumps(snapshot_dict(field)))


def field_from_dict(data):
    grid = MeridianGrid(int(data["n"]), Topology(data["topology"]), np.asarray(data["theta"]))
    return HeightField(grid, np.asarray(data["v"]))


def load_snapshot(path):
    return field_from_dict(json.loads(Path(path).read_text()))
