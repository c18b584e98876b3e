"""Effective master equations from eliminating damped bosonic modes."""

__version__ = "0.1.0"
