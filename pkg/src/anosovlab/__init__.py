"""Numerical experiments on geodesic flows of negatively curved surfaces."""

__version__ = "0.1.0"
