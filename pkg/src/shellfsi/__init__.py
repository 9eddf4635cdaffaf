"""Fluid-shell interaction on a moving 2D domain via a fixed-domain Galerkin method."""

__version__ = "0.1.0"
