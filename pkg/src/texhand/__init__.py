"""Sparse-to-dense hand texture completion and texture-guided pose supervision."""

__version__ = "0.1.0"
