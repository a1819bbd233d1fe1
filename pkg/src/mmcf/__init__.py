"""Modified mean curvature flow of radial graphs in hyperbolic space."""

__version__ = "0.1.0"
