"""Evaluation metrics: image similarity, geometric distortion, OCR accuracy."""

from .distortion import (
    DenseFlow,
    aligned_distortion,
    axis_aligned_distortion,
    correspondence_lookup,
    estimate_flow,
    local_distortion,
)
from .losses import LossBundle, LossWeights, loss_bundle
from .ocr import (
    Block,
    BlockLayout,
    LayoutAlignedResult,
    OcrEngine,
    char_error_rate,
    edit_distance,
    layout_aligned_ocr,
    normalize_ocr_text,
    ocr_scores,
    subprocess_ocr,
)
from .ssim import PYRAMID_WEIGHTS, mssim, ssim_single

__all__ = [
    "Block",
    "BlockLayout",
    "DenseFlow",
    "LayoutAlignedResult",
    "LossBundle",
    "LossWeights",
    "OcrEngine",
    "PYRAMID_WEIGHTS",
    "aligned_distortion",
    "axis_aligned_distortion",
    "char_error_rate",
    "correspondence_lookup",
    "edit_distance",
    "estimate_flow",
    "layout_aligned_ocr",
    "local_distortion",
    "loss_bundle",
    "mssim",
    "normalize_ocr_text",
    "ocr_scores",
    "ssim_single",
    "subprocess_ocr",
]
