"""Generalizable semantic Gaussian splatting."""

__version__ = "0.1.0"
