"""Conditional diffusion for symbolic background music on piano rolls."""

__version__ = "0.1.0"
