"""Continuous sparse Fourier transform recovery in several dimensions."""

__version__ = "0.1.0"
