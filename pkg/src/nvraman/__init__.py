"""Simulation of microwave stimulated Raman transitions and STIRAP in the
15NV-center ground state."""

__version__ = "0.1.0"
