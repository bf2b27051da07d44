"""Surrogate-accelerated history matching workbench for 2D oil-water flow."""

__version__ = "0.1.0"
