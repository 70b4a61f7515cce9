"""Momentum residual networks with exactly invertible fixed-point dynamics."""

__version__ = "0.3.0"
