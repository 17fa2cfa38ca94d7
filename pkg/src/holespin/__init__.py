"""Simulator of an optically controlled quantum-dot hole spin in a detuned microcavity."""

__version__ = "0.1.0"
