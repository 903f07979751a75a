"""Occupant comfort-preference modelling from micro-EMA feedback and sensor streams."""

__version__ = "0.1.0"
