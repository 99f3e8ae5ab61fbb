"""Existence diagnosis and composite estimation for discrete hierarchical loglinear models."""

__version__ = "0.1.0"
