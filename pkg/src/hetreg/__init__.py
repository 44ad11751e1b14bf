"""Robust structured heterogeneity analysis for high-dimensional regression."""

__version__ = "0.1.0"
