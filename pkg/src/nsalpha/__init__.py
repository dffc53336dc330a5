"""Pseudo-spectral Navier-Stokes-alpha model with an indicator-weighted nonlinear filter."""

__version__ = "0.1.0"
