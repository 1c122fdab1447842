"""Lidar-only vehicle motion estimation from range-image pairs."""

__version__ = "0.1.0"
