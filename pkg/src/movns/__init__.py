"""Spectral Galerkin solver for stochastic Navier-Stokes on moving domains."""

__version__ = "0.1.0"
