"""Simulation and verification lab for two-dimensional Ginzburg-Landau lattice fields."""

__version__ = "0.1.0"
