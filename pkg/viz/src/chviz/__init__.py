"""Offline rendering of spinodal solver outputs."""

__version__ = "0.1.0"
