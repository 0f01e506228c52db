"""Percolation clusters on finite boxes of Z^d: isoperimetry, spectra and heat kernels."""

__version__ = "0.1.0"
