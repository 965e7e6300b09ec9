"""Discrete stability laboratory for a compressible flow coupled to a clamped beam."""

__version__ = "0.1.0"
