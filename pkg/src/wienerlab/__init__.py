"""Malliavin calculus on finite-dimensional Gaussian spaces and Stein-Malliavin bounds."""

__version__ = "0.1.0"
