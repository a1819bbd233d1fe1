"""Closed-form constant mean curvature surfaces used as oracles and barriers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import HeightField, Topology, embed


class SphereKind(str, Enum):
    INTERIOR = "interior"  # center (c, -sigma R); H = sigma w.r.t. outward normal
    EXTERIOR = "exterior"  # center (c, +sigma R); H = sigma w.r.t. inward normal


@dataclass(frozen=True)
class EquidistanceSphere:
    """Euclidean sphere whose part in the upper half-space has constant H = sigma.

    ``offset`` is the signed horizontal position of the center along e_1
    (the meridian plane direction); axisymmetric caps have offset 0.
    """

    sigma: float
    R: float
    kind: SphereKind = SphereKind.INTERIOR
    offset: float = 0.0

    @property
    def center_height(self):
        sign = -1.0 if self.kind is SphereKind.INTERIOR else 1.0
        return sign * self.sigma * self.R

    @property
    def trace_radius(self):
        """Radius of the sphere's trace on the ideal boundary {x_{n+1} = 0}."""
        return self.R * math.sqrt(1.0 - self.sigma**2)

    def radial_height(self, theta, branch="far"):
        """Radial height of the sphere along rays z = (sin t, cos t).

        ``far`` is the outer intersection, ``near`` the one closer to the
        origin.  NaN where the ray misses the sphere.
        """
        theta = np.asarray(theta, dtype=float)
        zc = self.offset * np.sin(theta) + self.center_height * np.cos(theta)
        c2 = self.offset**2 + self.center_height**2
        disc = zc**2 - c2 + self.R**2
        root = np.sqrt(np.where(disc >= 0, disc, np.nan))
        r = zc + root if branch == "far" else zc - root
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), np.nan)

    def distance_range(self, field):
        """Per-node (min, max) Euclidean distance from the surface to the center.

        Axisymmetric surfaces are rotated about the vertical axis, so an
        off-axis center sees a range of distances around each parallel.
        """
        rho, x = embed(field)
        dx = x - self.center_height
        if field.grid.topology is Topology.MERIDIAN:
            d = np.hypot(rho - self.offset, dx)
            return d, d
        c = abs(self.offset)
        return np.hypot(np.abs(rho - c), dx), np.hypot(rho + c, dx)

    def scaled(self, factor):
        """Homothetic dilation about (offset, 0): a hyperbolic isometry."""
        return EquidistanceSphere(self.sigma, self.R * factor, self.kind, self.offset)


def cap_height_field(R, sigma, grid):
    """Radial height of the centered type-1 sphere of radius R.

    Solves |e^v z + sigma R e| = R:  v = log R + log(sqrt(1 - sigma^2 (1 - y^2)) - sigma y).
    """
    if R <= 0:
        raise ValueError("R must be positive")
    y = grid.y
    return HeightField(grid, math.log(R) + np.log(np.sqrt(1.0 - sigma**2 * (1.0 - y**2)) - sigma * y))


def radius_from_boundary(r, sigma, eps):
    """Radius of the type-1 sphere through the circle of radius r at height eps.

    Positive root of R^2 = (eps + sigma R)^2 + r^2.
    """
    if r <= 0 or eps < 0 or not -1 < sigma < 1:
        raise ValueError("need r > 0, eps >= 0 and sigma in (-1, 1)")
    s2 = 1.0 - sigma**2
    return (eps * sigma + math.sqrt(eps**2 * sigma**2 + s2 * (eps**2 + r**2))) / s2


def boundary_cap(r, sigma, eps, grid):
    """Exact CMC-sigma radial graph spanning the lifted circle of radius r."""
    return cap_height_field(radius_from_boundary(r, sigma, eps), sigma, grid)


def meridian_sphere(x_left, x_right, sigma, eps):
    """Type-1 circle through (x_left, eps) and (x_right, eps) in the half-plane.

    Both points share a height, so the center sits on the perpendicular
    bisector and the radius follows from the centered formula.
    """
    if not x_left < 0 < x_right:
        raise ValueError("endpoints must straddle the origin")
    half = 0.5 * (x_right - x_left)
    R = radius_from_boundary(half, sigma, eps)
    return EquidistanceSphere(sigma, R, SphereKind.INTERIOR, 0.5 * (x_left + x_right))


def sphere_field(sphere, grid, branch="far"):
    v = sphere.radial_height(grid.theta, branch=branch)
    return HeightField(grid, v)


def barrier_radii(delta1, delta2, eps, sigma0):
    """Radii and center heights of the two tangent barrier balls.

    Returns ``(R1, a1, R2, a2)`` with
    R_i = (-(-1)^i eps sigma0 + sqrt(eps^2 + delta_i^2 (1 - sigma0^2))) / (1 - sigma0^2)
    and a_i = (-1)^i R_i sigma0.
    """
    if not 0 <= sigma0 < 1:
        raise ValueError("sigma0 must lie in [0, 1)")
    if delta1 <= 0 or delta2 <= 0 or eps < 0:
        raise ValueError("need delta_i > 0 and eps >= 0")
    s2 = 1.0 - sigma0**2
    out = []
    for i, d in ((1, delta1), (2, delta2)):
        sign = (-1) ** i
        R = (-sign * eps * sigma0 + math.sqrt(eps**2 + d**2 * s2)) / s2
        out += [R, sign * R * sigma0]
    return tuple(out)


def barrier_spheres(p0_e1, eps, delta1, delta2, sigma0):
    """Interior and exterior barrier spheres tangent at P0 = p0_e1 e_1 + eps e.

    e_1 is the exterior normal of the boundary curve at P0, so the interior
    ball's center lies at P0 - delta1 e_1 and the exterior one at P0 + delta2 e_1.
    """
    R1, _, R2, _ = barrier_radii(delta1, delta2, eps, sigma0)
    return (
        EquidistanceSphere(sigma0, R1, SphereKind.INTERIOR, p0_e1 - delta1),
        EquidistanceSphere(sigma0, R2, SphereKind.EXTERIOR, p0_e1 + delta2),
    )


def tangent_plane_eta(p0_e1, sigma, z_e1, y, lam=None):
    """Radial height of the plane x.e_1 + lam x_{n+1} = p0_e1.

    ``lam`` defaults to sigma / sqrt(1 - sigma^2), the CMC-sigma plane tangent
    to the interior sphere at an ideal boundary point.
    """
    if lam is None:
        lam = sigma / math.sqrt(1.0 - sigma**2)
    denom = lam * np.asarray(y, dtype=float) + np.asarray(z_e1, dtype=float)
    if np.any(denom <= 0):
        raise ValueError("evaluation point outside the half-space z.nu0 > 0")
    return np.log(p0_e1 / denom)


def tangent_plane_at(sphere, p_e1, p_height):
    """(p0_e1, lam) of the plane tangent to ``sphere`` at the point (p_e1, p_height).

    At p_height = 0 on an interior sphere this reduces to lam = sigma/sqrt(1-sigma^2)
    and p0_e1 = p_e1.
    """
    n1 = p_e1 - sphere.offset
    n2 = p_height - sphere.center_height
    lam = n2 / n1
    return p_e1 + lam * p_height, lam


def horosphere_field(c, grid):
    """Horizontal plane x_{n+1} = c as a radial graph: v = log(c / cos theta)."""
    if c <= 0:
        raise ValueError("horosphere height must be positive")
    return HeightField(grid, np.log(c / grid.y))
