"""Differentially private client selection driven by a broadcast price signal."""

__version__ = "0.1.0"
