"""Reverse-complement consistency regularization for DNA sequence models."""

__version__ = "0.1.0"
