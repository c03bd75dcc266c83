"""Stage-1 fitting: global transform estimation and bbox normalization.

The localization grid is registered to the canonical grid by least
squares; the resulting transform is composed with a margin-padded bbox
normalization so the document fills the canonical square.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, GeometryError
from .geometry import AffineTransform2D, Grid2D, Homography2D


class FitKind(enum.Enum):
    SIMILARITY = "similarity"
    AFFINE = "affine"
    PERSPECTIVE = "perspective"

    @classmethod
    def parse(cls, name: str) -> "FitKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise GeometryError(
                f"unknown fit kind {name!r}; expected one of "
                f"{[k.value for k in cls]}"
            ) from None


@dataclass(frozen=True)
class MarginConfig:
    """Boundary extension ratio: each bbox side grows by m * (axis extent)."""

    m: float = 0.03

    def __post_init__(self):
        if not (0.0 <= self.m < 0.5) or not np.isfinite(self.m):
            raise GeometryError(f"margin must satisfy 0 <= m < 0.5, got {self.m}")


def _as_points(g) -> np.ndarray:
    if isinstance(g, Grid2D):
        return g.points.reshape(-1, 2)
    pts = np.asarray(g, dtype=np.float64)
    return pts.reshape(-1, 2)


def _fit_affine(src: np.ndarray, dst: np.ndarray) -> AffineTransform2D:
    n = src.shape[0]
    a = np.concatenate([src, np.ones((n, 1))], axis=1)
    sol, _, rank, _ = np.linalg.lstsq(a, dst, rcond=None)
    if rank < 3:
        raise DegenerateGeometryError(
            "affine fit needs >= 3 non-collinear points (rank-deficient system)"
        )
    return AffineTransform2D(sol.T)


def _fit_similarity(src: np.ndarray, dst: np.ndarray) -> AffineTransform2D:
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    s = src - cs
    d = dst - cd
    denom = float(np.sum(s * s))
    if denom <= 1e-30:
        raise DegenerateGeometryError("similarity fit needs >= 2 distinct points")
    a = float(np.sum(s[:, 0] * d[:, 0] + s[:, 1] * d[:, 1])) / denom
    b = float(np.sum(s[:, 0] * d[:, 1] - s[:, 1] * d[:, 0])) / denom
    lin = np.array([[a, -b], [b, a]])
    off = cd - lin @ cs
    return AffineTransform2D.from_parts(lin, off)


def _norm_points_for_dlt(pts: np.ndarray):
    c = pts.mean(axis=0)
    centered = pts - c
    scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(centered, axis=1)), 1e-12)
    t = np.array([[scale, 0, -scale * c[0]], [0, scale, -scale * c[1]], [0, 0, 1.0]])
    return centered * scale, t


def _fit_perspective(src: np.ndarray, dst: np.ndarray) -> Homography2D:
    if src.shape[0] < 4:
        raise DegenerateGeometryError("perspective fit needs >= 4 points")
    sn, ts = _norm_points_for_dlt(src)
    dn, td = _norm_points_for_dlt(dst)
    n = sn.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-10 * max(sv[0], 1.0):
        raise DegenerateGeometryError("perspective fit: points are degenerate")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) > 1e-12:
        h = h / h[2, 2]
    return Homography2D(h)


def fit_transform(g, e, kind: FitKind = FitKind.AFFINE):
    """Least-squares transform T minimizing sum ||T(g_i) - e_i||^2.

    Affine and similarity return :class:`AffineTransform2D`; perspective
    returns a :class:`Homography2D` (normalized DLT, no refinement).
    """
    src = _as_points(g)
    dst = _as_points(e)
    if src.shape != dst.shape:
        raise GeometryError(f"point sets must match, got {src.shape} vs {dst.shape}")
    if kind == FitKind.AFFINE:
        return _fit_affine(src, dst)
    if kind == FitKind.SIMILARITY:
        return _fit_similarity(src, dst)
    return _fit_perspective(src, dst)


def norm_transform(points, margin: MarginConfig = MarginConfig()) -> AffineTransform2D:
    """Affine mapping the margin-expanded bbox of points onto [-1, 1]^2.

    Scales are independent per axis, so the content fills the square.
    """
    pts = _as_points(points)
    if not np.all(np.isfinite(pts)):
        raise GeometryError("points must be finite")
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    if x1 - x0 <= 1e-12 or y1 - y0 <= 1e-12:
        raise DegenerateGeometryError(f"degenerate bbox [{x0},{x1}]x[{y0},{y1}]")
    mx = margin.m * (x1 - x0)
    my = margin.m * (y1 - y0)
    x0e, x1e = x0 - mx, x1 + mx
    y0e, y1e = y0 - my, y1 + my
    sx = 2.0 / (x1e - x0e)
    sy = 2.0 / (y1e - y0e)
    return AffineTransform2D(
        np.array([[sx, 0.0, -1.0 - sx * x0e], [0.0, sy, -1.0 - sy * y0e]])
    )


def stage1_transform(
    g0: Grid2D,
    e0: Grid2D,
    kind: FitKind = FitKind.AFFINE,
    margin: MarginConfig = MarginConfig(),
):
    """Full stage-1 transform: bbox normalization composed onto the grid fit."""
    a_init = fit_transform(g0, e0, kind)
    rectified = a_init.apply(g0.points.reshape(-1, 2))
    s_norm = norm_transform(rectified, margin)
    if isinstance(a_init, Homography2D):
        return Homography2D(s_norm.as_matrix3() @ a_init.m)
    return s_norm @ a_init


def affine_loss(a_pred: AffineTransform2D, a_gt: AffineTransform2D) -> float:
    """Entrywise L1 distance over the six affine parameters (sum, not mean)."""
    return float(np.abs(a_pred.m - a_gt.m).sum())
