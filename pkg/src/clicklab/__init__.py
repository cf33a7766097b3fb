"""Simulation and analysis of time-tagged single-photon detector clicks."""

__version__ = "0.1.0"
