"""Simulation and analysis of quantum jumps in a strongly coupled atom-cavity system."""

__version__ = "0.1.0"
