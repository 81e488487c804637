"""Desk-scale sound-guided image manipulation toolkit."""

__version__ = "0.1.0"
