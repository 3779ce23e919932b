"""Shaping-encoder-assisted constellation shaping: link simulation and training."""

__version__ = "0.1.0"
