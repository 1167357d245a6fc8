"""Exact filtering of digitized continuous quantum measurement records."""

__version__ = "0.1.0"
