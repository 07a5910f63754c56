"""Symmetries of Itô stochastic differential equations."""

__version__ = "0.1.0"
