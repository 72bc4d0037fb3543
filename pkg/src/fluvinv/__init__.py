"""Workbench for inverting generative channel-belt models against well and seismic data."""

__version__ = "0.1.0"
