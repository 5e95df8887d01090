"""Numerical laboratory for the 5D mass-resonant quadratic Schroedinger system."""

__version__ = "0.1.0"
