"""Simulation lab for network-shrunken dynamic pricing."""

__version__ = "0.1.0"
