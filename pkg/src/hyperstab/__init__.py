"""Lyapunov certificates and simulation for 1-D semilinear hyperbolic systems."""

__version__ = "0.1.0"
