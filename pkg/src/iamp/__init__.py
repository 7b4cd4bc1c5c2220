"""Hybrid interaction-aware motion prediction for vehicles on lanelet maps."""

__version__ = "0.1.0"
