"""Warping operators: affine warps, map warps, and map composition.

All warps are backward: for every output pixel a source coordinate is
computed and the source image is sampled bilinearly there, which avoids
the holes/overlaps of forward scattering.  Image sampling outside the
source takes a constant fill value; coordinate-field sampling inside
:func:`compose_maps` clamps to the border instead, keeping composed
coordinates finite and inside the source domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import GeometryError
from .geometry import (
    BackwardMap,
    ForegroundMask,
    Grid2D,
    RasterImage,
    norm_to_pixel,
)


@dataclass(frozen=True)
class SampleOptions:
    fill: float | tuple = 0.0
    emit_oob_mask: bool = False

    def fill_vector(self, channels: int) -> np.ndarray:
        f = np.atleast_1d(np.asarray(self.fill, dtype=np.float64))
        if np.any(f < 0.0) or np.any(f > 1.0) or not np.all(np.isfinite(f)):
            raise GeometryError(f"fill must be finite in [0, 1], got {self.fill!r}")
        return np.broadcast_to(f, (channels,))


_DEFAULT_OPTS = SampleOptions()


def _check_out_dims(h: int, w: int) -> None:
    if h < 2 or w < 2:
        raise GeometryError(f"output must be at least 2x2 pixels, got {h}x{w}")


def _sample_image_at(img: RasterImage, coords: np.ndarray, opts: SampleOptions):
    """coords: (H, W, 2) normalized source positions."""
    h, w = coords.shape[0], coords.shape[1]
    px = norm_to_pixel(coords[:, :, 0], img.width).ravel()
    py = norm_to_pixel(coords[:, :, 1], img.height).ravel()
    fill = opts.fill_vector(img.channels)
    values, oob = kernels.sample_image(img.data, px, py, fill)
    out = RasterImage(values.reshape(h, w, img.channels))
    if opts.emit_oob_mask:
        return out, ForegroundMask(oob.reshape(h, w) == 0)
    return out


def warp_by_map(img: RasterImage, d: BackwardMap, opts: SampleOptions = _DEFAULT_OPTS):
    """Render through a backward map: output (i, j) samples img at d[i, j]."""
    return _sample_image_at(img, d.coords, opts)


def warp_affine(
    img: RasterImage,
    transform,
    out_h: int,
    out_w: int,
    opts: SampleOptions = _DEFAULT_OPTS,
):
    """Warp by a source->output transform; samples img at transform^-1(p)."""
    _check_out_dims(out_h, out_w)
    inv = transform.invert()
    ident = BackwardMap.identity(out_h, out_w)
    coords = inv.apply(ident.coords)
    return _sample_image_at(img, coords, opts)


def densify_grid(grid: Grid2D, out_h: int, out_w: int) -> BackwardMap:
    """Bilinearly interpolate a sparse control grid to a dense backward map.

    Control point (i, j) is anchored at the canonical position of the
    output frame, so the grid is sampled on a uniform lattice.
    """
    _check_out_dims(out_h, out_w)
    gh, gw = grid.rows, grid.cols
    u = np.arange(out_w, dtype=np.float64) * ((gw - 1) / (out_w - 1))
    v = np.arange(out_h, dtype=np.float64) * ((gh - 1) / (out_h - 1))
    uu = np.broadcast_to(u[None, :], (out_h, out_w)).ravel()
    vv = np.broadcast_to(v[:, None], (out_h, out_w)).ravel()
    vals = kernels.sample_field(grid.points, uu, vv)
    return BackwardMap(vals.reshape(out_h, out_w, 2))


def compose_affine_into_map(
    g, a_inv, out_h: int | None = None, out_w: int | None = None
) -> BackwardMap:
    """Apply an inverse stage-1 transform pointwise to a grid or map.

    No resampling is involved: D[p] = a_inv(G[p]).  A sparse grid is
    densified to (out_h, out_w) first.
    """
    if isinstance(g, Grid2D):
        if out_h is None or out_w is None:
            raise GeometryError("densifying a sparse grid requires out_h and out_w")
        g = densify_grid(g, out_h, out_w)
    return BackwardMap(a_inv.apply(g.coords))


def compose_maps(d_prev: BackwardMap, g_next: BackwardMap) -> BackwardMap:
    """Chain backward maps: D_new[p] = D_prev sampled at G_next[p].

    G_next defines the new output resolution; its coordinates are clamped
    to [-1, 1] before sampling the two-channel field D_prev.
    """
    px = norm_to_pixel(g_next.coords[:, :, 0], d_prev.width).ravel()
    py = norm_to_pixel(g_next.coords[:, :, 1], d_prev.height).ravel()
    vals = kernels.sample_field(d_prev.coords, px, py)
    return BackwardMap(vals.reshape(g_next.height, g_next.width, 2))


def invert_affine(transform):
    """Invert an affine transform (or homography); singular inputs raise."""
    return transform.invert()


def resize_image(img: RasterImage, out_h: int, out_w: int) -> RasterImage:
    """Corner-aligned bilinear resize (an identity-map warp at the new size)."""
    _check_out_dims(out_h, out_w)
    return warp_by_map(img, BackwardMap.identity(out_h, out_w))


def invert_map(d: BackwardMap, targets: np.ndarray, init: np.ndarray,
               tol: float = 1e-10, max_iter: int = 40) -> np.ndarray:
    """Solve d(q) = target for each target by damped Newton on the bilinear field.

    targets, init: (N, 2) normalized coordinates.  Query points are kept
    inside the map domain.  Returns (N, 2) solutions; non-converged points
    keep their best iterate (callers needing hard guarantees check residuals).
    """
    h, w = d.height, d.width
    q = np.array(init, dtype=np.float64, copy=True)
    targets = np.asarray(targets, dtype=np.float64)

    def field_at(qn):
        px = norm_to_pixel(qn[:, 0], w)
        py = norm_to_pixel(qn[:, 1], h)
        return kernels.sample_field(d.coords, px, py)

    step_h = 1e-6
    for _ in range(max_iter):
        f = field_at(q)
        r = f - targets
        err = np.abs(r).max(axis=1)
        if np.all(err < tol):
            break
        # Jacobian by central differences of the bilinear field.
        jx = (field_at(q + [step_h, 0.0]) - field_at(q - [step_h, 0.0])) / (2 * step_h)
        jy = (field_at(q + [0.0, step_h]) - field_at(q - [0.0, step_h])) / (2 * step_h)
        det = jx[:, 0] * jy[:, 1] - jy[:, 0] * jx[:, 1]
        tiny = np.abs(det) < 1e-12
        det = np.where(tiny, np.where(det < 0, -1e-12, 1e-12), det)
        dx = (r[:, 0] * jy[:, 1] - r[:, 1] * jy[:, 0]) / det
        dy = (jx[:, 0] * r[:, 1] - jx[:, 1] * r[:, 0]) / det
        step = np.stack([dx, dy], axis=1)
        norm = np.max(np.abs(step), axis=1, keepdims=True)
        scale = np.where(norm > 0.25, 0.25 / np.maximum(norm, 1e-300), 1.0)
        q -= step * scale
        np.clip(q, -1.0, 1.0, out=q)
    return q
