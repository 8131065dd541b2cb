"""Finite-n simulation and scaling-limit PDE laboratory for online regression and PCA."""

__version__ = "0.1.0"
