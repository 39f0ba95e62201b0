"""Lexico-acoustic dialog act classification."""

__version__ = "0.1.0"
