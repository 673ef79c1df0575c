"""Solver and validation toolkit for polynomial reachability games."""

__version__ = "0.1.0"
