"""Bi-level gEUD fluence-map optimization on synthetic phantoms."""

__version__ = "0.1.0"
