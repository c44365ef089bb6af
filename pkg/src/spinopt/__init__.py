"""Spin-register optimal control with open- and closed-loop gradient ascent."""

__version__ = "0.1.0"
