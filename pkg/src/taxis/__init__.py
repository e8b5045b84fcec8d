"""Finite-volume solver and numerical certificates for a regularised Keller-Segel system."""

__version__ = "0.1.0"
