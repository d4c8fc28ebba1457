"""Numerical laboratory for conformal metrics with measurable coefficients."""

__version__ = "0.1.0"
