"""Simulation and verification toolkit for inclusion processes with a slow phase."""
__version__ = "0.1.0"
