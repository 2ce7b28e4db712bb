"""Adaptive mixed finite element solver for the Cahn-Hilliard equation."""

__version__ = "0.1.0"
