"""Lagrangian chaos in the 2D stochastic Navier-Stokes equations."""

__version__ = "0.1.0"
