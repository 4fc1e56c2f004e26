"""Tabular lab for agnostic policy learning under variational gradient dominance."""
__version__ = "0.1.0"
