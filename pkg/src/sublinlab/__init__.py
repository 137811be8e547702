"""Finite-difference lab for -Laplace u = m f(u) with indefinite weight m and sublinear f."""

__version__ = "0.1.0"
