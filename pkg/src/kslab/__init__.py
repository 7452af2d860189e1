"""Numerical laboratory for parabolic-elliptic chemotaxis with singular sensitivity and logistic source."""

__version__ = "0.1.0"
