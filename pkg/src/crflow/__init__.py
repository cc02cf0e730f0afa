"""Conformal Ricci flow on symmetry-reduced asymptotically hyperbolic and closed geometries."""
__version__ = "0.1.0"
