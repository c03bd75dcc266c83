"""Cascaded backward-mapping document rectification."""

from .geometry import (
    AffineTransform2D,
    BackwardMap,
    ForegroundMask,
    Grid2D,
    Homography2D,
    RasterImage,
    canonical_grid,
    pixel_to_norm,
    norm_to_pixel,
)
from .kernels import backend_name

__version__ = "0.1.0"

__all__ = [
    "AffineTransform2D",
    "BackwardMap",
    "ForegroundMask",
    "Grid2D",
    "Homography2D",
    "RasterImage",
    "backend_name",
    "canonical_grid",
    "norm_to_pixel",
    "pixel_to_norm",
    "__version__",
]
