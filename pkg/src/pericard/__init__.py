"""Nonlinear cardiac mechanics with pericardial boundary conditions and windkessel coupling."""

__version__ = "0.1.0"
