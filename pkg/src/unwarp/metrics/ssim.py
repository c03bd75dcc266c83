"""Structural similarity: single-scale SSIM and the 5-level pyramid score.

Windowed statistics use an 11x11 Gaussian (sigma 1.5) in 'valid' mode, so
every window lies fully inside the image.  With a mask, only windows fully
inside the mask contribute, and both inputs are multiplied by the mask
first so masked-out pixels can never leak into any level's statistics.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

from ..errors import DimensionMismatchError, MetricError
from ..geometry import ForegroundMask, RasterImage

PYRAMID_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
K1 = 0.01
K2 = 0.03
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5


def _window() -> np.ndarray:
    ax = np.arange(WINDOW_SIZE, dtype=np.float64) - (WINDOW_SIZE - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * WINDOW_SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


_WIN = _window()
_ONES = np.ones((WINDOW_SIZE, WINDOW_SIZE), dtype=np.float64)


def _as_gray(img) -> np.ndarray:
    if isinstance(img, RasterImage):
        return img.to_gray()
    return np.asarray(img, dtype=np.float64)


def _ssim_maps(a: np.ndarray, b: np.ndarray):
    c1 = K1 * K1
    c2 = K2 * K2
    mu_a = convolve2d(a, _WIN, mode="valid")
    mu_b = convolve2d(b, _WIN, mode="valid")
    e_aa = convolve2d(a * a, _WIN, mode="valid")
    e_bb = convolve2d(b * b, _WIN, mode="valid")
    e_ab = convolve2d(a * b, _WIN, mode="valid")
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    return lum * cs, cs


def _downsample(a: np.ndarray) -> np.ndarray:
    h2, w2 = a.shape[0] // 2, a.shape[1] // 2
    a = a[: 2 * h2, : 2 * w2]
    return a.reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _downsample_mask(m: np.ndarray) -> np.ndarray:
    return (_downsample(m.astype(np.float64)) >= 0.5).astype(np.float64)


def _window_selector(mask: np.ndarray) -> np.ndarray:
    coverage = convolve2d(mask, _ONES, mode="valid")
    return coverage >= WINDOW_SIZE * WINDOW_SIZE - 0.5


def ssim_single(a, b, mask: ForegroundMask | None = None) -> float:
    """Mean single-scale SSIM over valid windows (optionally mask-restricted)."""
    ga, gb = _as_gray(a), _as_gray(b)
    if ga.shape != gb.shape:
        raise DimensionMismatchError(f"image shapes differ: {ga.shape} vs {gb.shape}")
    if min(ga.shape) < WINDOW_SIZE:
        raise MetricError(f"image too small for an {WINDOW_SIZE}x{WINDOW_SIZE} window")
    if mask is None:
        smap, _ = _ssim_maps(ga, gb)
        return float(smap.mean())
    m = mask.data.astype(np.float64)
    if m.shape != ga.shape:
        raise DimensionMismatchError("mask dimensions must match the images")
    sel = _window_selector(m)
    if not sel.any():
        raise MetricError("mask admits no fully-covered window")
    smap, _ = _ssim_maps(ga * m, gb * m)
    return float(smap[sel].mean())


def mssim(a, b, mask: ForegroundMask | None = None, levels: int = 5) -> float:
    """Multi-scale structural similarity with the 5-level pyramid weights.

    Levels 1..4 contribute their contrast-structure term, the coarsest
    level the full SSIM; the published weights are normalized by their sum
    (1.0001) so identical images score exactly 1.
    """
    ga, gb = _as_gray(a), _as_gray(b)
    if ga.shape != gb.shape:
        raise DimensionMismatchError(f"image shapes differ: {ga.shape} vs {gb.shape}")
    if levels < 1 or levels > len(PYRAMID_WEIGHTS):
        raise MetricError(f"levels must be in 1..{len(PYRAMID_WEIGHTS)}")
    need = WINDOW_SIZE * 2 ** (levels - 1)
    if min(ga.shape) < need:
        raise MetricError(
            f"image min dimension {min(ga.shape)} too small for {levels} levels "
            f"(needs >= {need})"
        )
    weights = np.asarray(PYRAMID_WEIGHTS[:levels], dtype=np.float64)
    weights = weights / weights.sum()

    m = None
    if mask is not None:
        m = mask.data.astype(np.float64)
        if m.shape != ga.shape:
            raise DimensionMismatchError("mask dimensions must match the images")

    score = 1.0
    for lvl in range(levels):
        if m is not None:
            sel = _window_selector(m)
            if not sel.any():
                raise MetricError(f"mask admits no fully-covered window at level {lvl + 1}")
            smap, csmap = _ssim_maps(ga * m, gb * m)
            s_mean = float(smap[sel].mean())
            cs_mean = float(csmap[sel].mean())
        else:
            smap, csmap = _ssim_maps(ga, gb)
            s_mean = float(smap.mean())
            cs_mean = float(csmap.mean())
        val = s_mean if lvl == levels - 1 else cs_mean
        score *= max(val, 0.0) ** weights[lvl]
        if lvl < levels - 1:
            ga = _downsample(ga)
            gb = _downsample(gb)
            if m is not None:
                m = _downsample_mask(m)
    return float(score)
