"""Spectral Galerkin Navier-Stokes data, basis codecs and ReLU operator learning."""

__version__ = "0.1.0"
