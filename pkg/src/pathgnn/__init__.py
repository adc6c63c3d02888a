"""Shortest-path prediction with an edge-aware graph attention network."""

__version__ = "0.1.0"
