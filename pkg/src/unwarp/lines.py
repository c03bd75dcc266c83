"""Line segments: detection, axis-aligned entropy, warping, adaptive stopping.

The alignment score is the length-weighted mean of the acute angular
deviation of detected segments from the nearest coordinate axis; a
rectified document drives it toward zero.  The iterative refinement
controller accepts a new deformation field only while the score keeps
improving by the configured factor.
"""

from __future__ import annotations

import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import (
    DegenerateGeometryError,
    DimensionMismatchError,
    EmptyLineSetError,
    GeometryError,
)
from .geometry import Grid2D, RasterImage, canonical_grid, pixel_to_norm


@dataclass(frozen=True, eq=False)
class LineSegmentSet:
    """Detected or warped line segments with normalized endpoints."""

    p0: np.ndarray  # (N, 2)
    p1: np.ndarray  # (N, 2)

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=np.float64).reshape(-1, 2)
        p1 = np.asarray(self.p1, dtype=np.float64).reshape(-1, 2)
        if p0.shape != p1.shape:
            raise GeometryError("endpoint arrays must match")
        if not (np.all(np.isfinite(p0)) and np.all(np.isfinite(p1))):
            raise GeometryError("segment endpoints must be finite")
        p0 = p0.copy()
        p1 = p1.copy()
        p0.setflags(write=False)
        p1.setflags(write=False)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    def __len__(self) -> int:
        return self.p0.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.p1 - self.p0, axis=1)

    @property
    def deviations_deg(self) -> np.ndarray:
        """Acute angle (degrees, in [0, 45]) to the nearest axis."""
        d = np.abs(self.p1 - self.p0)
        ang = np.degrees(np.arctan2(d[:, 1], d[:, 0]))
        return np.minimum(ang, 90.0 - ang)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1)

    def select(self, mask) -> "LineSegmentSet":
        return LineSegmentSet(self.p0[mask], self.p1[mask])

    @classmethod
    def empty(cls) -> "LineSegmentSet":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)))


@dataclass(frozen=True)
class StoppingConfig:
    max_iterations: int = 5
    theta_thresh_deg: float = 5.0
    tau: float = 0.99

    def __post_init__(self):
        if self.max_iterations < 0:
            raise GeometryError("max_iterations must be >= 0")
        if not (0.0 < self.tau <= 1.0):
            raise GeometryError("tau must lie in (0, 1]")
        if not (0.0 < self.theta_thresh_deg <= 45.0):
            raise GeometryError("theta_thresh_deg must lie in (0, 45]")


@dataclass(frozen=True)
class StoppingTrace:
    """Record of one stopping run: chosen count and the score sequence."""

    n_opt: int
    scores: tuple
    fallback_used: bool = False


# --- detection -------------------------------------------------------------

#: Default detector parameters (gradient magnitude is per unit intensity).
MAG_THRESHOLD = 0.02
ANGLE_TOL_DEG = 22.5
MIN_SUPPORT = 20
MIN_LENGTH_FRAC = 0.02
MIN_DENSITY = 0.3


def _sobel(gray: np.ndarray):
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    a = gray
    gx[1:-1, 1:-1] = (
        (a[:-2, 2:] + 2.0 * a[1:-1, 2:] + a[2:, 2:])
        - (a[:-2, :-2] + 2.0 * a[1:-1, :-2] + a[2:, :-2])
    ) / 8.0
    gy[1:-1, 1:-1] = (
        (a[2:, :-2] + 2.0 * a[2:, 1:-1] + a[2:, 2:])
        - (a[:-2, :-2] + 2.0 * a[:-2, 1:-1] + a[:-2, 2:])
    ) / 8.0
    return gx, gy


def detect_lines(
    img: RasterImage,
    *,
    mag_threshold: float = MAG_THRESHOLD,
    angle_tol_deg: float = ANGLE_TOL_DEG,
    min_support: int = MIN_SUPPORT,
    min_length_frac: float = MIN_LENGTH_FRAC,
    min_density: float = MIN_DENSITY,
) -> LineSegmentSet:
    """Gradient-orientation region-growing line detector.

    Pixels whose level-line angle agrees with a region's running mean
    orientation (within angle_tol_deg) are grown into regions; each
    surviving region is fit with a rectangle whose principal axis gives
    the segment.  Deterministic for a fixed input image.
    """
    h, w = img.height, img.width
    if min(h, w) < 16:
        raise GeometryError(f"image too small for line detection: {h}x{w}")
    gray = img.to_gray()
    gx, gy = _sobel(gray)
    mag = np.hypot(gx, gy)
    angle = np.arctan2(gy, gx) + np.pi / 2.0
    angle = np.where(angle > np.pi, angle - 2.0 * np.pi, angle)

    flat_mag = mag.ravel()
    candidates = np.nonzero(flat_mag >= mag_threshold)[0]
    if candidates.size == 0:
        return LineSegmentSet.empty()
    order = candidates[np.argsort(-flat_mag[candidates], kind="stable")]
    labels, n_regions = kernels.grow_regions(
        angle, mag, order, mag_threshold, np.radians(angle_tol_deg)
    )
    if n_regions == 0:
        return LineSegmentSet.empty()

    ys, xs = np.nonzero(labels)
    idx = labels[ys, xs].astype(np.intp)
    wgt = mag[ys, xs]
    xs_f = xs.astype(np.float64)
    ys_f = ys.astype(np.float64)
    nreg = n_regions + 1

    support = np.bincount(idx, minlength=nreg)
    sw = np.bincount(idx, weights=wgt, minlength=nreg)
    sw = np.where(sw <= 0, 1.0, sw)
    cx = np.bincount(idx, weights=wgt * xs_f, minlength=nreg) / sw
    cy = np.bincount(idx, weights=wgt * ys_f, minlength=nreg) / sw
    dxs = xs_f - cx[idx]
    dys = ys_f - cy[idx]
    mxx = np.bincount(idx, weights=wgt * dxs * dxs, minlength=nreg) / sw
    mxy = np.bincount(idx, weights=wgt * dxs * dys, minlength=nreg) / sw
    myy = np.bincount(idx, weights=wgt * dys * dys, minlength=nreg) / sw
    theta = 0.5 * np.arctan2(2.0 * mxy, mxx - myy)
    ux = np.cos(theta)
    uy = np.sin(theta)

    t = dxs * ux[idx] + dys * uy[idx]
    s = -dxs * uy[idx] + dys * ux[idx]
    tmin = np.full(nreg, np.inf)
    tmax = np.full(nreg, -np.inf)
    smin = np.full(nreg, np.inf)
    smax = np.full(nreg, -np.inf)
    np.minimum.at(tmin, idx, t)
    np.maximum.at(tmax, idx, t)
    np.minimum.at(smin, idx, s)
    np.maximum.at(smax, idx, s)

    length = tmax - tmin
    width = smax - smin
    min_len_px = min_length_frac * np.hypot(w, h)
    density = support / np.maximum((length + 1.0) * (width + 1.0), 1.0)
    keep = (
        (support >= min_support)
        & (length >= min_len_px)
        & (density >= min_density)
        & np.isfinite(length)
    )
    keep[0] = False
    rids = np.nonzero(keep)[0]
    if rids.size == 0:
        return LineSegmentSet.empty()

    e0x = cx[rids] + ux[rids] * tmin[rids]
    e0y = cy[rids] + uy[rids] * tmin[rids]
    e1x = cx[rids] + ux[rids] * tmax[rids]
    e1y = cy[rids] + uy[rids] * tmax[rids]
    p0 = np.stack([pixel_to_norm(e0x, w), pixel_to_norm(e0y, h)], axis=1)
    p1 = np.stack([pixel_to_norm(e1x, w), pixel_to_norm(e1y, h)], axis=1)

    # deterministic output order: longest first, ties broken by position
    key = np.lexsort((e0y, e0x, -length[rids]))
    return LineSegmentSet(p0[key], p1[key])


def filter_aligned(lines: LineSegmentSet, theta_thresh_deg: float) -> LineSegmentSet:
    """Keep segments whose axis deviation is <= theta_thresh_deg (inclusive)."""
    if len(lines) == 0:
        return lines
    return lines.select(lines.deviations_deg <= theta_thresh_deg)


def line_entropy(lines: LineSegmentSet) -> float:
    """Length-weighted mean axis deviation, in degrees."""
    if len(lines) == 0:
        raise EmptyLineSetError("line entropy requires a non-empty segment set")
    lengths = lines.lengths
    return float(np.sum(lengths * lines.deviations_deg) / np.sum(lengths))


# --- warping ---------------------------------------------------------------


def _tps_phi(d2: np.ndarray) -> np.ndarray:
    # r^2 * log(r) written as 0.5 * r^2 * log(r^2); phi(0) = 0
    out = np.zeros_like(d2)
    pos = d2 > 0
    out[pos] = 0.5 * d2[pos] * np.log(d2[pos])
    return out


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.maximum(d2, 0.0)


def _subsample_indices(n: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n, stride)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


class ThinPlateSpline:
    """2-D thin-plate-spline interpolant with an affine polynomial term."""

    def __init__(self, centers: np.ndarray, values: np.ndarray, reg: float = 1e-8):
        centers = np.asarray(centers, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        k = centers.shape[0]
        d2 = _sq_dist(centers, centers)
        off_diag = d2 + np.eye(k)
        if np.any(off_diag <= 0):
            raise DegenerateGeometryError("coincident interpolation centers")
        a = np.zeros((k + 3, k + 3))
        a[:k, :k] = _tps_phi(d2) + reg * np.eye(k)
        p = np.concatenate([np.ones((k, 1)), centers], axis=1)
        a[:k, k:] = p
        a[k:, :k] = p.T
        rhs = np.zeros((k + 3, 2))
        rhs[:k] = values
        try:
            sol = np.linalg.solve(a, rhs)
        except np.linalg.LinAlgError as exc:
            raise DegenerateGeometryError(f"singular interpolation system: {exc}") from exc
        self._centers = centers
        self._w = sol[:k]
        self._a = sol[k:]

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        phi = _tps_phi(_sq_dist(pts, self._centers))
        poly = np.concatenate([np.ones((pts.shape[0], 1)), pts], axis=1)
        return phi @ self._w + poly @ self._a


def warp_lines(
    lines: LineSegmentSet,
    g_next: Grid2D,
    u: Grid2D,
    samples_per_line: int = 8,
    max_centers: int = 420,
) -> LineSegmentSet:
    """Advance segments through a new deformation field.

    g_next is a backward field: control point (i, j), anchored at the
    canonical position u[i, j] of the NEW output frame, samples from
    g_next[i, j] in the previous frame.  Segments live in the previous
    frame, so the interpolant maps centers g_next -> values u (the
    forward direction); a pure translation field g_next = u + t thus
    moves segments by -t.  Each warped polyline is refit with its
    least-squares line before lengths and deviations are recomputed.
    """
    if (g_next.rows, g_next.cols) != (u.rows, u.cols):
        raise DimensionMismatchError(
            f"grid dims differ: {g_next.rows}x{g_next.cols} vs {u.rows}x{u.cols}"
        )
    if samples_per_line < 2:
        raise GeometryError("samples_per_line must be >= 2")
    if len(lines) == 0:
        return lines

    rows, cols = g_next.rows, g_next.cols
    stride = 1
    while ((rows + stride - 1) // stride) * ((cols + stride - 1) // stride) > max_centers:
        stride += 1
    ri = _subsample_indices(rows, stride)
    ci = _subsample_indices(cols, stride)
    centers = g_next.points[np.ix_(ri, ci)].reshape(-1, 2)
    values = u.points[np.ix_(ri, ci)].reshape(-1, 2)
    tps = ThinPlateSpline(centers, values)

    ts = np.linspace(0.0, 1.0, samples_per_line)
    pts = lines.p0[:, None, :] * (1.0 - ts)[None, :, None] + lines.p1[:, None, :] * ts[None, :, None]
    warped = tps(pts.reshape(-1, 2)).reshape(len(lines), samples_per_line, 2)

    mean = warped.mean(axis=1)
    c = warped - mean[:, None, :]
    sxx = np.sum(c[:, :, 0] ** 2, axis=1)
    sxy = np.sum(c[:, :, 0] * c[:, :, 1], axis=1)
    syy = np.sum(c[:, :, 1] ** 2, axis=1)
    theta = 0.5 * np.arctan2(2.0 * sxy, sxx - syy)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    t = np.sum(c * dirs[:, None, :], axis=2)
    e0 = mean + dirs * t.min(axis=1)[:, None]
    e1 = mean + dirs * t.max(axis=1)[:, None]
    out = LineSegmentSet(e0, e1)
    return out.select(out.lengths > 1e-12)


# --- stopping --------------------------------------------------------------


def entropy_stopping(s_ref: float, initial_state, advance, cfg: StoppingConfig) -> StoppingTrace:
    """Core accept/reject loop over candidate refinement fields.

    advance(n, state) -> (score, new_state) evaluates iteration n against
    the current state.  Iteration n is accepted iff score < tau * best;
    the first rejection stops the loop.
    """
    scores = [float(s_ref)]
    s_best = float(s_ref)
    n_opt = 0
    state = initial_state
    for n in range(1, cfg.max_iterations + 1):
        s_n, candidate = advance(n, state)
        scores.append(float(s_n))
        if s_n < cfg.tau * s_best:
            s_best = float(s_n)
            n_opt = n
            state = candidate
        else:
            break
    return StoppingTrace(n_opt=n_opt, scores=tuple(scores), fallback_used=False)


def adaptive_stop(
    o1: RasterImage,
    field_provider: Callable[[int], Grid2D],
    cfg: StoppingConfig = StoppingConfig(),
    detector: Callable[[RasterImage], LineSegmentSet] = detect_lines,
) -> StoppingTrace:
    """Choose the refinement iteration count from line-alignment scores.

    Reference lines are detected on the coarse-rectified render and
    filtered for near-axis alignment; each candidate field advances the
    current line set and is accepted while the entropy keeps dropping.
    When no reference lines survive filtering, a single iteration is
    used as the fallback policy.
    """
    ref = filter_aligned(detector(o1), cfg.theta_thresh_deg)
    if len(ref) == 0:
        return StoppingTrace(n_opt=min(1, cfg.max_iterations), scores=(), fallback_used=True)
    s0 = line_entropy(ref)

    def advance(n, state):
        g = field_provider(n)
        u = canonical_grid(g.rows, g.cols)
        warped = warp_lines(state, g, u)
        if len(warped) == 0:
            return float("inf"), state
        return line_entropy(warped), warped

    return entropy_stopping(s0, ref, advance, cfg)


def subprocess_detector(cmd: Sequence[str]) -> Callable[[RasterImage], LineSegmentSet]:
    """Adapter for an external detector process.

    The command is invoked with a PNG path appended; it must print one
    "x0 y0 x1 y1" quadruple (normalized coordinates) per detected line.
    """
    from .formats import write_image

    def run(img: RasterImage) -> LineSegmentSet:
        with tempfile.TemporaryDirectory(prefix="unwarp-lines-") as td:
            png = Path(td) / "input.png"
            write_image(png, img)
            proc = subprocess.run(
                [*cmd, str(png)], capture_output=True, text=True, check=True
            )
        segs = []
        for raw in proc.stdout.splitlines():
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split()
            if len(parts) != 4:
                raise GeometryError(f"detector emitted a malformed line: {raw!r}")
            segs.append([float(v) for v in parts])
        if not segs:
            return LineSegmentSet.empty()
        arr = np.asarray(segs, dtype=np.float64)
        return LineSegmentSet(arr[:, :2], arr[:, 2:])

    return run
