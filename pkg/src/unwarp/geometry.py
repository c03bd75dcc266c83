"""Core coordinate types: grids, transforms, backward maps, images, masks.

Conventions used everywhere in this package:

* Normalized coordinates: x spans the width axis and y the height axis,
  both over [-1, 1].  The convention is corner-aligned: pixel center 0
  maps to -1 and pixel center ``size - 1`` maps to +1, so an identity
  backward map reproduces an image exactly.
* Arrays are row-major with y (rows) leading, but coordinate PAIRS are
  stored as (x, y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, SingularTransformError

DET_EPS = 1e-9


def pixel_to_norm(px, size: int):
    """Map a pixel coordinate to [-1, 1]; centers 0 and size-1 hit the ends."""
    if size < 2:
        raise GeometryError(f"axis size must be >= 2, got {size}")
    return -1.0 + 2.0 * np.asarray(px, dtype=np.float64) / (size - 1)


def norm_to_pixel(x, size: int):
    """Inverse of :func:`pixel_to_norm`."""
    if size < 2:
        raise GeometryError(f"axis size must be >= 2, got {size}")
    return (np.asarray(x, dtype=np.float64) + 1.0) * (size - 1) / 2.0


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Sparse h x w control grid of normalized (x, y) points.

    Values outside [-1, 1] are permitted: pre-normalization grids locate
    the document inside the source frame and may exceed the square.
    """

    points: np.ndarray  # (h, w, 2)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise GeometryError(f"grid points must have shape (h, w, 2), got {pts.shape}")
        if pts.shape[0] < 2 or pts.shape[1] < 2:
            raise GeometryError(f"grid must be at least 2x2, got {pts.shape[:2]}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("grid points must be finite")
        object.__setattr__(self, "points", _freeze(pts))

    @property
    def rows(self) -> int:
        return self.points.shape[0]

    @property
    def cols(self) -> int:
        return self.points.shape[1]


def canonical_grid(h: int, w: int) -> Grid2D:
    """Uniformly spaced grid spanning [-1, 1]^2 with corners at (+-1, +-1)."""
    if h < 2 or w < 2:
        raise GeometryError(f"canonical grid needs h >= 2 and w >= 2, got {h}x{w}")
    xs = pixel_to_norm(np.arange(w), w)
    ys = pixel_to_norm(np.arange(h), h)
    pts = np.empty((h, w, 2), dtype=np.float64)
    pts[:, :, 0] = xs[None, :]
    pts[:, :, 1] = ys[:, None]
    return Grid2D(pts)


@dataclass(frozen=True, eq=False)
class AffineTransform2D:
    """Six-parameter transform [[a, b, c], [d, e, f]]: (x,y) -> (ax+by+c, dx+ey+f)."""

    m: np.ndarray  # (2, 3)

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (2, 3):
            raise GeometryError(f"affine matrix must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("affine matrix must be finite")
        object.__setattr__(self, "m", _freeze(m))

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def from_parts(cls, linear, offset) -> "AffineTransform2D":
        m = np.empty((2, 3), dtype=np.float64)
        m[:, :2] = linear
        m[:, 2] = offset
        return cls(m)

    @property
    def det(self) -> float:
        m = self.m
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Apply to an (..., 2) array of (x, y) points."""
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.m[:, :2].T + self.m[:, 2]

    def compose(self, inner: "AffineTransform2D") -> "AffineTransform2D":
        """Return self o inner (inner is applied first)."""
        lin = self.m[:, :2] @ inner.m[:, :2]
        off = self.m[:, :2] @ inner.m[:, 2] + self.m[:, 2]
        return AffineTransform2D.from_parts(lin, off)

    def __matmul__(self, inner: "AffineTransform2D") -> "AffineTransform2D":
        return self.compose(inner)

    def invert(self, eps: float = DET_EPS) -> "AffineTransform2D":
        d = self.det
        if abs(d) <= eps:
            raise SingularTransformError(f"affine determinant {d!r} below threshold {eps}")
        a, b, c = self.m[0]
        e, f, g = self.m[1]
        lin = np.array([[f, -b], [-e, a]]) / d
        off = -lin @ np.array([c, g])
        return AffineTransform2D.from_parts(lin, off)

    def as_matrix3(self) -> np.ndarray:
        m3 = np.eye(3)
        m3[:2, :] = self.m
        return m3


@dataclass(frozen=True, eq=False)
class Homography2D:
    """3x3 projective transform, used for the perspective fitting variant."""

    m: np.ndarray  # (3, 3)

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise GeometryError(f"homography matrix must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("homography matrix must be finite")
        object.__setattr__(self, "m", _freeze(m))

    @classmethod
    def identity(cls) -> "Homography2D":
        return cls(np.eye(3))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.m))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        shape = pts.shape
        flat = pts.reshape(-1, 2)
        hom = np.concatenate([flat, np.ones((flat.shape[0], 1))], axis=1)
        out = hom @ self.m.T
        w = out[:, 2:3]
        if np.any(np.abs(w) < 1e-12):
            raise SingularTransformError("point maps to infinity under homography")
        return (out[:, :2] / w).reshape(shape)

    def compose(self, inner) -> "Homography2D":
        return Homography2D(self.m @ _as_matrix3(inner))

    def __matmul__(self, inner) -> "Homography2D":
        return self.compose(inner)

    def invert(self, eps: float = DET_EPS) -> "Homography2D":
        d = self.det
        if abs(d) <= eps:
            raise SingularTransformError(f"homography determinant {d!r} below threshold {eps}")
        inv = np.linalg.inv(self.m)
        return Homography2D(inv / inv[2, 2] if abs(inv[2, 2]) > 1e-12 else inv)

    def as_matrix3(self) -> np.ndarray:
        return self.m.copy()


def _as_matrix3(t) -> np.ndarray:
    if isinstance(t, (AffineTransform2D, Homography2D)):
        return t.as_matrix3()
    return np.asarray(t, dtype=np.float64)


def invert_transform(t):
    """Invert either transform kind; raises SingularTransformError when singular."""
    return t.invert()


@dataclass(frozen=True, eq=False)
class BackwardMap:
    """Dense per-output-pixel field of normalized source coordinates.

    Every stored coordinate addresses the ORIGINAL input image, never an
    intermediate render, so a single sampling pass suffices.
    """

    coords: np.ndarray  # (H, W, 2)

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] != 2:
            raise GeometryError(f"map coords must have shape (H, W, 2), got {c.shape}")
        if c.shape[0] < 1 or c.shape[1] < 1:
            raise GeometryError("map must be non-empty")
        if not np.all(np.isfinite(c)):
            raise GeometryError("map coords must be finite")
        object.__setattr__(self, "coords", _freeze(c))

    @property
    def height(self) -> int:
        return self.coords.shape[0]

    @property
    def width(self) -> int:
        return self.coords.shape[1]

    @classmethod
    def identity(cls, h: int, w: int) -> "BackwardMap":
        if h < 2 or w < 2:
            raise GeometryError(f"identity map needs h >= 2 and w >= 2, got {h}x{w}")
        c = np.empty((h, w, 2), dtype=np.float64)
        c[:, :, 0] = pixel_to_norm(np.arange(w), w)[None, :]
        c[:, :, 1] = pixel_to_norm(np.arange(h), h)[:, None]
        return cls(c)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Image with intensities in [0, 1]; 1 or 3 channels, stored (H, W, C)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise GeometryError(f"image must be (H, W) or (H, W, {{1,3}}), got {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise GeometryError("image must be non-empty")
        if not np.all(np.isfinite(d)):
            raise GeometryError("image intensities must be finite")
        lo, hi = float(d.min()), float(d.max())
        if lo < -1e-9 or hi > 1 + 1e-9:
            raise GeometryError(f"image intensities must lie in [0, 1], got [{lo}, {hi}]")
        if lo < 0.0 or hi > 1.0:
            d = np.clip(d, 0.0, 1.0)
        object.__setattr__(self, "data", _freeze(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_gray(self) -> np.ndarray:
        """Return an (H, W) float64 luma view of the image."""
        if self.channels == 1:
            return self.data[:, :, 0]
        d = self.data
        return 0.299 * d[:, :, 0] + 0.587 * d[:, :, 1] + 0.114 * d[:, :, 2]


@dataclass(frozen=True, eq=False)
class ForegroundMask:
    """Binary per-pixel mask; nonzero means valid document foreground."""

    data: np.ndarray  # (H, W) of {0, 1}

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise GeometryError(f"mask must be 2-D, got shape {d.shape}")
        out = (d != 0).astype(np.uint8)
        out.setflags(write=False)
        object.__setattr__(self, "data", out)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]
