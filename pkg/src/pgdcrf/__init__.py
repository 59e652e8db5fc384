"""Projected-gradient CRF inference with learnable pairwise filters."""

__version__ = "0.1.0"
