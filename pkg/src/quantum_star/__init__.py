"""Driven wave-packet dynamics on quantum star graphs with lattice potentials."""

__version__ = "0.1.0"
