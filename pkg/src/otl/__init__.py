"""Landscape tools for random over-complete fourth-order tensors."""

__version__ = "0.1.0"
