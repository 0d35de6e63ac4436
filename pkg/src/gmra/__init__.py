"""Geometric multi-resolution analysis of point clouds."""

__version__ = "0.1.0"
