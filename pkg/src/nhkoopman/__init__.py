"""Bilinear Koopman surrogates and predictive control for differential-drive robots."""

__version__ = "0.1.0"
