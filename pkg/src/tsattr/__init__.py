"""Feature attribution toolkit for pixel-wise crop yield regression."""

__version__ = "0.1.0"
