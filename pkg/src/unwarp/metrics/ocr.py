"""OCR accuracy metrics, plus the layout-aligned variant.

The layout-aligned score recognizes each ground-truth text block in the
ground-truth reading order, so a page-level engine's layout mistakes
(block reordering, dropped regions) cannot leak into the measurement of
geometric rectification quality.
"""

from __future__ import annotations

import re
import subprocess
import tempfile
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from ..errors import MetricError
from ..geometry import RasterImage
from .distortion import DenseFlow, correspondence_lookup, estimate_flow

_WS_RUN = re.compile(r"\s+")


@dataclass(frozen=True, eq=False)
class Block:
    polygon: np.ndarray  # (K, 2) pixel coords in the GT frame
    text: str

    def __post_init__(self):
        poly = np.asarray(self.polygon, dtype=np.float64).reshape(-1, 2)
        poly = poly.copy()
        poly.setflags(write=False)
        object.__setattr__(self, "polygon", poly)


@dataclass(frozen=True, eq=False)
class BlockLayout:
    """Ordered text blocks; the order is the ground-truth reading order."""

    blocks: tuple

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    @classmethod
    def from_pairs(cls, pairs) -> "BlockLayout":
        return cls(tuple(Block(polygon=p, text=t) for p, t in pairs))

    def to_pairs(self):
        return [(b.polygon, b.text) for b in self.blocks]

    @property
    def texts(self):
        return [b.text for b in self.blocks]


class OcrEngine(Protocol):
    def recognize(self, img: RasterImage) -> str: ...


def edit_distance(hyp: str, ref: str) -> int:
    """Levenshtein distance with unit costs after Unicode NFC normalization."""
    a = unicodedata.normalize("NFC", hyp)
    b = unicodedata.normalize("NFC", ref)
    if not a:
        return len(b)
    if not b:
        return len(a)
    bn = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    m = len(bn)
    idx = np.arange(m + 1, dtype=np.int64)
    prev = idx.copy()
    for ch in np.frombuffer(a.encode("utf-32-le"), dtype=np.uint32):
        sub = prev[:-1] + (bn != ch)
        t = np.minimum(sub, prev[1:] + 1)
        raw = np.concatenate(([prev[0] + 1], t))
        prev = np.minimum.accumulate(raw - idx) + idx
    return int(prev[-1])


def char_error_rate(hyp: str, ref: str) -> float:
    """Edit distance normalized by the reference length."""
    ref_n = unicodedata.normalize("NFC", ref)
    if not ref_n:
        raise MetricError("reference text is empty")
    return edit_distance(hyp, ref) / len(ref_n)


def normalize_ocr_text(s: str) -> str:
    """NFC-normalize and collapse whitespace runs to single spaces."""
    return _WS_RUN.sub(" ", unicodedata.normalize("NFC", s)).strip()


def ocr_scores(hyp: str, ref: str):
    """(edit distance, character error rate) on whitespace-normalized text."""
    h = normalize_ocr_text(hyp)
    r = normalize_ocr_text(ref)
    if not r:
        raise MetricError("reference text is empty")
    ed = edit_distance(h, r)
    return ed, ed / len(r)


@dataclass(frozen=True)
class LayoutAlignedResult:
    aed: int
    acer: float
    hypothesis: str
    reference: str
    failed_blocks: tuple


def _transport_polygon(poly, aligner):
    if aligner is None or (isinstance(aligner, str) and aligner == "identity"):
        return poly
    if isinstance(aligner, DenseFlow):
        return correspondence_lookup(aligner, poly)
    raise MetricError(f"unknown aligner {aligner!r}")


def layout_aligned_ocr(
    rectified: RasterImage,
    layout: BlockLayout,
    aligner=None,
    ocr: OcrEngine | None = None,
    pad_frac: float = 0.02,
    gt_image: RasterImage | None = None,
) -> LayoutAlignedResult:
    """Recognize each GT block in GT order and score the ordered concatenation.

    aligner: None/'identity' (GT coords are output coords), a DenseFlow
    mapping rectified->GT, or 'match' to estimate one by block matching
    (requires gt_image).  A block mapping outside the image contributes
    empty text and is reported in failed_blocks (a full deletion).
    """
    if layout is None or len(layout) == 0:
        raise MetricError("layout has no blocks")
    if ocr is None:
        raise MetricError("an OCR engine is required")
    if isinstance(aligner, str) and aligner == "match":
        if gt_image is None:
            raise MetricError("aligner 'match' needs the GT image")
        aligner = estimate_flow(rectified, gt_image)

    h, w = rectified.height, rectified.width
    hyp_parts = []
    failed = []
    for i, block in enumerate(layout):
        poly = _transport_polygon(block.polygon, aligner)
        x0, y0 = poly.min(axis=0)
        x1, y1 = poly.max(axis=0)
        pad = max(1.0, pad_frac * max(x1 - x0, y1 - y0))
        xa = int(np.floor(x0 - pad))
        ya = int(np.floor(y0 - pad))
        xb = int(np.ceil(x1 + pad)) + 1
        yb = int(np.ceil(y1 + pad)) + 1
        xa, ya = max(xa, 0), max(ya, 0)
        xb, yb = min(xb, w), min(yb, h)
        if xb - xa < 2 or yb - ya < 2:
            failed.append(i)
            hyp_parts.append("")
            continue
        crop = RasterImage(rectified.data[ya:yb, xa:xb])
        hyp_parts.append(ocr.recognize(crop))

    hyp = normalize_ocr_text("\n".join(hyp_parts))
    ref = normalize_ocr_text("\n".join(layout.texts))
    if not ref:
        raise MetricError("layout reference text is empty")
    aed = edit_distance(hyp, ref)
    return LayoutAlignedResult(
        aed=aed,
        acer=aed / len(ref),
        hypothesis=hyp,
        reference=ref,
        failed_blocks=tuple(failed),
    )


def subprocess_ocr(cmd) -> OcrEngine:
    """Adapter spawning an external recognizer: PNG path in, UTF-8 text out."""
    from ..formats import write_image

    class _Proc:
        def recognize(self, img: RasterImage) -> str:
            with tempfile.TemporaryDirectory(prefix="unwarp-ocr-") as td:
                png = Path(td) / "region.png"
                write_image(png, img)
                proc = subprocess.run(
                    [*cmd, str(png)], capture_output=True, check=True
                )
            return proc.stdout.decode("utf-8")

    return _Proc()
