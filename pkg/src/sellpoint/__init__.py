"""Personalized selling-point keyword prediction for sponsored search."""

__version__ = "0.1.0"
