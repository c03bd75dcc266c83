"""Synthetic distorted-document generator with exact ground truth."""

from .distort import (
    DistortionSpec,
    ForwardMap,
    SyntheticSample,
    TpsWarpSpec,
    WaveSpec,
    affine_skeleton,
    check_injective,
    distort,
    forward_map,
    invert_forward,
    spec_from_text,
    spec_to_text,
    true_flow,
)
from .ocr import GlyphOcr
from .render import PAGE_H, PAGE_W, render_page
from .suite import DIFFICULTIES, load_suite, make_suite, sample_spec, write_suite

__all__ = [
    "DIFFICULTIES",
    "DistortionSpec",
    "ForwardMap",
    "GlyphOcr",
    "PAGE_H",
    "PAGE_W",
    "SyntheticSample",
    "TpsWarpSpec",
    "WaveSpec",
    "affine_skeleton",
    "check_injective",
    "distort",
    "forward_map",
    "invert_forward",
    "load_suite",
    "make_suite",
    "render_page",
    "sample_spec",
    "spec_from_text",
    "spec_to_text",
    "true_flow",
    "write_suite",
]
