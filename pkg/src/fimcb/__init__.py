"""Stress-source classification of protein particle images, color vs monochrome."""

__version__ = "0.1.0"
