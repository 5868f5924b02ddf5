"""Simulation lab for optimism bias in learned refugee-placement policies."""
__version__ = "0.1.0"
