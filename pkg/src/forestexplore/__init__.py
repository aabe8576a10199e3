"""Deterministic multi-UAV forest exploration simulator."""

__version__ = "0.1.0"
