"""Numerical laboratory for spectral multipliers, heat kernels and dyadic block norms on torus grids."""

__version__ = "0.1.0"
