"""Recursive hierarchical video captioning on a synthetic corpus."""

__version__ = "0.1.0"
