"""Plane-oriented texture mapping for coarse piece-wise planar building models."""

__version__ = "0.1.0"
