"""Spatio-temporal adversarial one-class fall detection."""

__version__ = "0.1.0"
