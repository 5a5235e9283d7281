"""Balanced failure-mode dataset synthesis for seismic structural response."""

__version__ = "0.1.0"
