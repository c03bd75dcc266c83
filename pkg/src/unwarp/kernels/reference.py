"""Pure-numpy/Python kernels; the fallback when the extension is missing.

The native backend mirrors these routines operation-for-operation (same
expression order, no FMA) so both produce bit-identical results.
"""

from __future__ import annotations

from math import atan2, cos, fabs, pi, sin

import numpy as np

SNAP_EPS = 1e-9


def _snap(p: np.ndarray) -> np.ndarray:
    r = np.rint(p)
    return np.where(np.abs(p - r) < SNAP_EPS, r, p)


def sample_image(img, px, py, fill):
    """Bilinear sample at pixel coords; out-of-range pixels take fill.

    img: (H, W, C) float64; px, py: (N,) float64; fill: (C,) float64.
    Returns (out (N, C) float64, oob (N,) uint8).
    """
    h, w, c = img.shape
    px = _snap(px)
    py = _snap(py)
    oob = (px < 0.0) | (px > w - 1.0) | (py < 0.0) | (py > h - 1.0)

    cx = np.clip(px, 0.0, w - 1.0)
    cy = np.clip(py, 0.0, h - 1.0)
    x0 = np.floor(cx)
    y0 = np.floor(cy)
    fx = cx - x0
    fy = cy - y0
    ix0 = x0.astype(np.intp)
    iy0 = y0.astype(np.intp)
    ix1 = np.minimum(ix0 + 1, w - 1)
    iy1 = np.minimum(iy0 + 1, h - 1)

    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx

    c00 = img[iy0, ix0]
    c01 = img[iy0, ix1]
    c10 = img[iy1, ix0]
    c11 = img[iy1, ix1]
    out = (c00 * w00[:, None] + c01 * w01[:, None]) + (
        c10 * w10[:, None] + c11 * w11[:, None]
    )
    out[oob] = fill
    return out, oob.astype(np.uint8)


def sample_field(field, px, py):
    """Bilinear sample of a 2-channel coordinate field; coords clamp to border.

    field: (H, W, 2) float64; px, py: (N,) float64 pixel coords.
    """
    h, w = field.shape[0], field.shape[1]
    cx = _snap(np.clip(px, 0.0, w - 1.0))
    cy = _snap(np.clip(py, 0.0, h - 1.0))
    x0 = np.floor(cx)
    y0 = np.floor(cy)
    fx = cx - x0
    fy = cy - y0
    ix0 = x0.astype(np.intp)
    iy0 = y0.astype(np.intp)
    ix1 = np.minimum(ix0 + 1, w - 1)
    iy1 = np.minimum(iy0 + 1, h - 1)

    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx

    c00 = field[iy0, ix0]
    c01 = field[iy0, ix1]
    c10 = field[iy1, ix0]
    c11 = field[iy1, ix1]
    return (c00 * w00[:, None] + c01 * w01[:, None]) + (
        c10 * w10[:, None] + c11 * w11[:, None]
    )


def grow_regions(angle, mag, order, mag_min, tol):
    """Gradient-orientation region growing over an 8-connected pixel grid.

    angle: (H, W) level-line angles in (-pi, pi]; mag: (H, W) gradient
    magnitude; order: (K,) flat seed indices, strongest first.  A pixel
    joins a region when its angle is within tol radians of the region's
    running mean orientation.  Returns (labels (H, W) int32, count).
    """
    h, w = angle.shape
    ang = angle.ravel()
    mg = mag.ravel()
    labels = np.zeros(h * w, dtype=np.int32)
    queue = np.empty(h * w, dtype=np.int64)
    two_pi = 2.0 * pi
    region = 0

    for seed in order:
        seed = int(seed)
        if labels[seed] != 0 or mg[seed] < mag_min:
            continue
        region += 1
        labels[seed] = region
        sx = cos(ang[seed])
        sy = sin(ang[seed])
        queue[0] = seed
        head = 0
        tail = 1
        while head < tail:
            idx = int(queue[head])
            head += 1
            y = idx // w
            x = idx - y * w
            for dy in (-1, 0, 1):
                ny = y + dy
                if ny < 0 or ny >= h:
                    continue
                for dx in (-1, 0, 1):
                    if dy == 0 and dx == 0:
                        continue
                    nx = x + dx
                    if nx < 0 or nx >= w:
                        continue
                    nidx = ny * w + nx
                    if labels[nidx] != 0 or mg[nidx] < mag_min:
                        continue
                    reg_ang = atan2(sy, sx)
                    d = ang[nidx] - reg_ang
                    while d > pi:
                        d -= two_pi
                    while d <= -pi:
                        d += two_pi
                    if fabs(d) <= tol:
                        labels[nidx] = region
                        sx += cos(ang[nidx])
                        sy += sin(ang[nidx])
                        queue[tail] = nidx
                        tail += 1
    return labels.reshape(h, w), region
