"""Lift attack transactions into readable pseudocode and runnable exploit sketches."""

__version__ = "0.1.0"
