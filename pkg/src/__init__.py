"""Offline-online Bayesian inversion for LTI acoustic-gravity wave models."""

__version__ = "0.1.0"
