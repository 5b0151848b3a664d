"""Oblique-tree policy distillation."""

__version__ = "0.1.0"
