"""Change-point estimation and inference for high-dimensional mean-shift panels."""

__version__ = "0.1.0"
