"""Spread-spectrum watermarks under synthetic diffusion edits: simulation, stress protocol and bounds."""

__version__ = "0.1.0"
