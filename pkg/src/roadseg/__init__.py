"""LiDAR road segmentation on a spherical-view grid, with a fixed-point streaming model."""

__version__ = "0.1.0"
