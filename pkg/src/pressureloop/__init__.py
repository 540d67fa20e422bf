"""Dual-RL toolkit for adaptive time-pressure regulation on a modular-arithmetic task."""

__version__ = "0.1.0"
