"""Training-objective terms evaluated as plain scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GeometryError
from ..geometry import AffineTransform2D, Grid2D, RasterImage
from ..affine_fit import affine_loss
from ..lines import detect_lines, filter_aligned, line_entropy
from .ssim import ssim_single


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # control-grid L1
    beta: float = 0.05  # SSIM
    gamma: float = 0.2  # line alignment
    lam: float = 5.0  # affine parameters

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam"):
            if getattr(self, name) < 0:
                raise GeometryError(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class LossBundle:
    grid_l1: float
    ssim: float
    align: float
    affine: float
    total: float


def loss_bundle(
    g_pred: Grid2D,
    g_gt: Grid2D,
    o_pred: RasterImage,
    o_gt: RasterImage,
    a_pred: AffineTransform2D | None = None,
    a_gt: AffineTransform2D | None = None,
    weights: LossWeights = LossWeights(),
    include_affine: bool = True,
    theta_thresh_deg: float = 5.0,
) -> LossBundle:
    """Weighted sum of grid-L1, SSIM, line-alignment, and affine terms.

    The alignment term is the entropy of near-axis lines detected on the
    predicted render, in radians (zero when nothing is detected).  With
    include_affine=False the affine term is dropped entirely, so the
    result is independent of a_pred/a_gt.
    """
    if (g_pred.rows, g_pred.cols) != (g_gt.rows, g_gt.cols):
        raise GeometryError("grids must share dimensions")
    l_grid = float(np.abs(g_pred.points - g_gt.points).mean())
    l_ssim = 1.0 - ssim_single(o_pred, o_gt)
    aligned = filter_aligned(detect_lines(o_pred), theta_thresh_deg)
    l_align = np.radians(line_entropy(aligned)) if len(aligned) else 0.0
    if include_affine:
        if a_pred is None or a_gt is None:
            raise GeometryError("affine term requested but transforms missing")
        l_affine = affine_loss(a_pred, a_gt)
    else:
        l_affine = 0.0
    total = (
        weights.alpha * l_grid
        + weights.beta * l_ssim
        + weights.gamma * l_align
        + (weights.lam * l_affine if include_affine else 0.0)
    )
    return LossBundle(
        grid_l1=l_grid, ssim=l_ssim, align=float(l_align), affine=float(l_affine),
        total=float(total),
    )
