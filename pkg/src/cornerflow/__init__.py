"""Chern-insulator truncations, edge-travelling operators and quantised boundary currents."""

__version__ = "0.1.0"
