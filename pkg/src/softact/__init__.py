"""Differentiable quasi-static soft-body simulation with learned actuation fields."""

__version__ = "0.1.0"
