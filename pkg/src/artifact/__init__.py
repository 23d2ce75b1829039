"""Simulation and bounds toolkit for matching databases under column repetition and noise."""

__version__ = "0.1.0"
