"""Density-matrix simulator for a driven V system with a trap or ground sink."""

__version__ = "0.3.0"
