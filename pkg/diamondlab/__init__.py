"""Directed polymers on hierarchical diamond lattices."""

__version__ = "1.0.0"
