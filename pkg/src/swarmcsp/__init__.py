"""Detect and correct timing-induced illegal meta-states in robot swarms."""

__version__ = "0.1.0"
