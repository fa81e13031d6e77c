"""Propagation symbols of constrained mode problems and the curve flows they drive."""
__version__ = "0.1.0"
