"""Evolutionary mining of alpha factors written in a small expression language."""

__version__ = "0.1.0"
