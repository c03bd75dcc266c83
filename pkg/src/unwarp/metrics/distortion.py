"""Geometric distortion metrics computed from dense correspondence fields.

A :class:`DenseFlow` holds, for every rectified pixel, the displacement to
its corresponding ground-truth position (pixels).  The masked metric
variants restrict every input that enters the computation to foreground
pixels, which keeps them bit-stable under arbitrary background edits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .. import kernels
from ..errors import DimensionMismatchError, EmptyLineSetError, MetricError
from ..geometry import ForegroundMask, RasterImage, norm_to_pixel, pixel_to_norm
from ..lines import LineSegmentSet, line_entropy


@dataclass(frozen=True, eq=False)
class DenseFlow:
    """Per-pixel (dx, dy) displacement mapping rectified -> GT, in pixels."""

    vectors: np.ndarray  # (H, W, 2)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise DimensionMismatchError(f"flow must be (H, W, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise MetricError("flow must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]


def _mask_flat(mask: ForegroundMask | None, h: int, w: int):
    if mask is None:
        return None
    if (mask.height, mask.width) != (h, w):
        raise DimensionMismatchError("mask dimensions must match the flow")
    return mask.data.ravel().astype(bool)


def local_distortion(flow: DenseFlow, mask: ForegroundMask | None = None) -> float:
    """Mean magnitude of the flow after removing its (masked) mean translation."""
    v = flow.vectors.reshape(-1, 2)
    sel = _mask_flat(mask, flow.height, flow.width)
    if sel is not None:
        v = v[sel]
    if v.shape[0] == 0:
        raise MetricError("mask excludes every pixel")
    r = v - v.mean(axis=0)
    return float(np.linalg.norm(r, axis=1).mean())


def _weighted_similarity(src: np.ndarray, dst: np.ndarray, w: np.ndarray):
    """Weighted LS similarity (scale-rotation + translation) src -> dst."""
    ws = w.sum()
    cs = (src * w[:, None]).sum(axis=0) / ws
    cd = (dst * w[:, None]).sum(axis=0) / ws
    s = src - cs
    d = dst - cd
    denom = float((w * (s * s).sum(axis=1)).sum())
    if denom <= 1e-30:
        lin = np.eye(2)
    else:
        a = float((w * (s[:, 0] * d[:, 0] + s[:, 1] * d[:, 1])).sum()) / denom
        b = float((w * (s[:, 0] * d[:, 1] - s[:, 1] * d[:, 0])).sum()) / denom
        lin = np.array([[a, -b], [b, a]])
    off = cd - lin @ cs
    return lin, off


def _sobel_weight(gray: np.ndarray) -> np.ndarray:
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[1:-1, 1:-1] = (
        (gray[:-2, 2:] + 2.0 * gray[1:-1, 2:] + gray[2:, 2:])
        - (gray[:-2, :-2] + 2.0 * gray[1:-1, :-2] + gray[2:, :-2])
    ) / 8.0
    gy[1:-1, 1:-1] = (
        (gray[2:, :-2] + 2.0 * gray[2:, 1:-1] + gray[2:, 2:])
        - (gray[:-2, :-2] + 2.0 * gray[:-2, 1:-1] + gray[:-2, 2:])
    ) / 8.0
    return np.hypot(gx, gy)


def aligned_distortion(
    flow: DenseFlow, gt: RasterImage, mask: ForegroundMask | None = None
) -> float:
    """Gradient-weighted mean residual after absorbing a global similarity.

    Weights are the GT gradient magnitude; with a mask both the GT image
    and the weights are masked before anything else is computed.  The
    residual norm is normalized by the image diagonal.
    """
    h, w = flow.height, flow.width
    if (gt.height, gt.width) != (h, w):
        raise DimensionMismatchError("gt dimensions must match the flow")
    gray = gt.to_gray()
    if mask is not None:
        if (mask.height, mask.width) != (h, w):
            raise DimensionMismatchError("mask dimensions must match the flow")
        gray = gray * mask.data
    wgt = _sobel_weight(gray)
    if mask is not None:
        wgt = wgt * mask.data
    wflat = wgt.ravel()
    total = float(wflat.sum())
    if total <= 0.0:
        raise MetricError("total gradient weight is zero")

    xs = np.broadcast_to(np.arange(w, dtype=np.float64)[None, :], (h, w)).ravel()
    ys = np.broadcast_to(np.arange(h, dtype=np.float64)[:, None], (h, w)).ravel()
    src = np.stack([xs, ys], axis=1)
    dst = src + flow.vectors.reshape(-1, 2)
    lin, off = _weighted_similarity(src, dst, wflat)
    residual = dst - (src @ lin.T + off)
    diag = float(np.hypot(h, w))
    return float((wflat * np.linalg.norm(residual, axis=1)).sum() / (total * diag))


def correspondence_lookup(
    flow: DenseFlow,
    gt_points_px: np.ndarray,
    valid: np.ndarray | None = None,
) -> np.ndarray:
    """Map GT pixel positions into the rectified image by nearest correspondence.

    Builds the set {x + flow(x)} over rectified pixels (optionally only
    where valid) and returns, for each query, the rectified pixel whose
    correspondence lies closest.
    """
    h, w = flow.height, flow.width
    xs = np.broadcast_to(np.arange(w, dtype=np.float64)[None, :], (h, w)).ravel()
    ys = np.broadcast_to(np.arange(h, dtype=np.float64)[:, None], (h, w)).ravel()
    pts = np.stack([xs, ys], axis=1) + flow.vectors.reshape(-1, 2)
    base = np.stack([xs, ys], axis=1)
    if valid is not None:
        vflat = valid.ravel().astype(bool)
        if not vflat.any():
            raise MetricError("no valid correspondence pixels")
        pts = pts[vflat]
        base = base[vflat]
    tree = cKDTree(pts)
    _, idx = tree.query(np.asarray(gt_points_px, dtype=np.float64))
    return base[idx]


def axis_aligned_distortion(
    rectified: RasterImage,
    flow: DenseFlow,
    gt_lines: LineSegmentSet,
    mask: ForegroundMask | None = None,
) -> float:
    """Entropy (degrees) of GT axis-aligned segments transported into the output.

    Segments are carried through the inverse flow correspondence; the
    masked variant restricts correspondences to foreground pixels and
    drops segments whose transported midpoint leaves the mask.
    """
    h, w = rectified.height, rectified.width
    if (flow.height, flow.width) != (h, w):
        raise DimensionMismatchError("flow dimensions must match the rectified image")
    if len(gt_lines) == 0:
        raise EmptyLineSetError("no ground-truth line segments")
    valid = mask.data if mask is not None else None

    def transport(pts_norm):
        px = norm_to_pixel(pts_norm[:, 0], w)
        py = norm_to_pixel(pts_norm[:, 1], h)
        moved = correspondence_lookup(flow, np.stack([px, py], axis=1), valid)
        return moved

    e0 = transport(gt_lines.p0)
    e1 = transport(gt_lines.p1)
    if mask is not None:
        mid = 0.5 * (e0 + e1)
        mx = np.clip(np.round(mid[:, 0]).astype(int), 0, w - 1)
        my = np.clip(np.round(mid[:, 1]).astype(int), 0, h - 1)
        keep = mask.data[my, mx] != 0
        e0, e1 = e0[keep], e1[keep]
    if e0.shape[0] == 0:
        raise EmptyLineSetError("all transported segments fall outside the mask")
    p0 = np.stack([pixel_to_norm(e0[:, 0], w), pixel_to_norm(e0[:, 1], h)], axis=1)
    p1 = np.stack([pixel_to_norm(e1[:, 0], w), pixel_to_norm(e1[:, 1], h)], axis=1)
    moved = LineSegmentSet(p0, p1)
    moved = moved.select(moved.lengths > 1e-12)
    if len(moved) == 0:
        raise EmptyLineSetError("transported segments degenerated")
    return line_entropy(moved)


def _pool2(a: np.ndarray) -> np.ndarray:
    h2, w2 = a.shape[0] // 2, a.shape[1] // 2
    return a[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _resize_field(field: np.ndarray, h: int, w: int) -> np.ndarray:
    fh, fw = field.shape[0], field.shape[1]
    if (fh, fw) == (h, w):
        return field
    u = np.linspace(0.0, fw - 1.0, w)
    v = np.linspace(0.0, fh - 1.0, h)
    uu = np.broadcast_to(u[None, :], (h, w)).ravel()
    vv = np.broadcast_to(v[:, None], (h, w)).ravel()
    return kernels.sample_field(field, uu, vv).reshape(h, w, 2)


def estimate_flow(
    a: RasterImage,
    b: RasterImage,
    levels: int = 3,
    block: int = 16,
    radius: int = 8,
) -> DenseFlow:
    """Coarse-to-fine block matching with normalized cross-correlation.

    Deterministic; score ties break toward the smallest total displacement,
    so textureless inputs yield a zero field.
    """
    ga, gb = a.to_gray(), b.to_gray()
    if ga.shape != gb.shape:
        raise DimensionMismatchError(f"image shapes differ: {ga.shape} vs {gb.shape}")
    pyr_a, pyr_b = [ga], [gb]
    for _ in range(levels - 1):
        if min(pyr_a[-1].shape) // 2 < block:
            break
        pyr_a.append(_pool2(pyr_a[-1]))
        pyr_b.append(_pool2(pyr_b[-1]))

    flow = np.zeros((*pyr_a[-1].shape, 2))
    for lvl in range(len(pyr_a) - 1, -1, -1):
        al, bl = pyr_a[lvl], pyr_b[lvl]
        h, w = al.shape
        flow = _resize_field(flow, h, w)
        starts_y = sorted({min(y, h - block) for y in range(0, h, block) if h >= block})
        starts_x = sorted({min(x, w - block) for x in range(0, w, block) if w >= block})
        if not starts_y or not starts_x:
            continue
        coarse = np.zeros((len(starts_y), len(starts_x), 2))
        for bi, by in enumerate(starts_y):
            for bj, bx in enumerate(starts_x):
                patch = al[by : by + block, bx : bx + block]
                cy, cx = by + (block - 1) / 2.0, bx + (block - 1) / 2.0
                f = flow[int(round(cy)), int(round(cx))]
                fdx, fdy = int(round(f[0])), int(round(f[1]))
                coarse[bi, bj] = _match_block(bl, patch, by, bx, fdy, fdx, radius, block)
        px = np.asarray(starts_x, dtype=np.float64) + (block - 1) / 2.0
        py = np.asarray(starts_y, dtype=np.float64) + (block - 1) / 2.0
        flow = _interp_block_field(coarse, px, py, h, w)
        if lvl > 0:
            nh, nw = pyr_a[lvl - 1].shape
            flow = _resize_field(flow, nh, nw) * 2.0
    return DenseFlow(flow)


def _match_block(bl, patch, by, bx, fdy, fdx, radius, block):
    h, w = bl.shape
    wy0 = by + fdy - radius
    wx0 = bx + fdx - radius
    y0 = max(wy0, 0)
    x0 = max(wx0, 0)
    y1 = min(wy0 + block + 2 * radius, h)
    x1 = min(wx0 + block + 2 * radius, w)
    if y1 - y0 < block or x1 - x0 < block:
        return np.array([float(fdx), float(fdy)])
    window = bl[y0:y1, x0:x1]
    sw = np.lib.stride_tricks.sliding_window_view(window, (block, block))
    pz = patch - patch.mean()
    pnorm = float(np.sqrt((pz * pz).sum()))
    wm = sw.mean(axis=(2, 3))
    cross = np.einsum("ijkl,kl->ij", sw, pz)
    wsq = np.einsum("ijkl,ijkl->ij", sw, sw)
    wvar = np.maximum(wsq - block * block * wm * wm, 0.0)
    denom = pnorm * np.sqrt(wvar)
    score = np.where(denom > 1e-9, cross / np.maximum(denom, 1e-30), 0.0)

    oy = y0 - by  # displacement of window row 0 relative to the block
    ox = x0 - bx
    sy, sx = score.shape
    dys = oy + np.arange(sy)
    dxs = ox + np.arange(sx)
    ddx, ddy = np.meshgrid(dxs, dys)
    best = score.max()
    tied = score >= best - 1e-12
    d2 = ddx * ddx + ddy * ddy
    d2 = np.where(tied, d2, np.inf)
    order = np.lexsort((ddx.ravel(), ddy.ravel(), d2.ravel()))
    k = order[0]
    return np.array([float(ddx.ravel()[k]), float(ddy.ravel()[k])])


def _interp_block_field(coarse, px, py, h, w):
    if coarse.shape[0] == 1 and coarse.shape[1] == 1:
        return np.broadcast_to(coarse[0, 0], (h, w, 2)).copy()
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    if coarse.shape[1] > 1:
        u = np.interp(xs, px, np.arange(len(px), dtype=np.float64))
    else:
        u = np.zeros(w)
    if coarse.shape[0] > 1:
        v = np.interp(ys, py, np.arange(len(py), dtype=np.float64))
    else:
        v = np.zeros(h)
    uu = np.broadcast_to(u[None, :], (h, w)).ravel()
    vv = np.broadcast_to(v[:, None], (h, w)).ravel()
    return kernels.sample_field(np.ascontiguousarray(coarse), uu, vv).reshape(h, w, 2)
