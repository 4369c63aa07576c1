"""Spiral-array tonal tension features and expressive performance modeling."""

__version__ = "0.1.0"
