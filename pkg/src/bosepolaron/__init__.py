"""Numerical laboratory for impurity dynamics in a dilute Bose gas at mean-field scaling."""

__version__ = "0.1.0"
