"""Synthetic enlarged-license-plate data factory and evaluation suite."""

__version__ = "0.1.0"
