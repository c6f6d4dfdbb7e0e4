"""Numerical laboratory for q-deformed Fock spaces and q-circular systems."""

__version__ = "0.1.0"
