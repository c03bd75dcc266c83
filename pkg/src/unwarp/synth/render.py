"""Flat synthetic page renderer: glyph text blocks plus ruled lines."""

from __future__ import annotations

import numpy as np

from ..errors import GeometryError
from ..geometry import RasterImage
from ..metrics.ocr import Block, BlockLayout
from . import font

PAGE_H = 712
PAGE_W = 488
BORDER_INSET = 10
BORDER_THICKNESS = 3
CONTENT_MARGIN = 28
ROW_RULE_GAP = 5  # blank rows between glyph bottoms and the baseline rule
RULE_THICKNESS = 3
ROW_PITCH = font.GLYPH_H_PX + ROW_RULE_GAP + RULE_THICKNESS + 8
BLOCK_GAP = 20

_WORD_CHARS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"


def _soften(canvas: np.ndarray) -> np.ndarray:
    """Separable [1, 2, 1]/4 blur with edge padding."""
    p = np.pad(canvas, 1, mode="edge")
    h = (p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]) / 4.0
    return (h[:-2] + 2.0 * h[1:-1] + h[2:]) / 4.0


def _random_row(rng: np.random.Generator, max_chars: int) -> str:
    words = []
    used = 0
    while True:
        n = int(rng.integers(2, 9))
        extra = n if not words else n + 1
        if used + extra > max_chars:
            break
        words.append("".join(_WORD_CHARS[i] for i in rng.integers(0, len(_WORD_CHARS), n)))
        used += extra
    return " ".join(words) if words else "x"


def _draw_text_row(canvas: np.ndarray, x: int, y: int, text: str, max_chars: int) -> str:
    drawn = text[:max_chars]
    for k, ch in enumerate(drawn):
        g = font.render_glyph_px(ch)
        cx = x + k * font.CELL_PITCH_PX
        canvas[y : y + font.GLYPH_H_PX, cx : cx + font.GLYPH_W_PX][g] = 0.0
    return drawn


def render_page(seed: int, blocks: int = 3, height: int = PAGE_H, width: int = PAGE_W,
                texts=None, soften: bool = True):
    """Render a flat page: white background, glyph text rows, ruled lines.

    Each block's reference text is exactly the string drawn, so the mock
    OCR can decode regions perfectly.  Deterministic for a fixed seed.
    When `texts` is given (one string per block, rows separated by \\n)
    those strings are rendered instead of random ones.  `soften` applies
    a one-pixel binomial blur, band-limiting the edges so the page
    survives resampling chains with little loss.
    """
    if blocks < 1:
        raise GeometryError("need at least one block")
    rng = np.random.default_rng(seed)
    canvas = np.ones((height, width), dtype=np.float64)

    # page border rectangle (long axis-aligned rules for detectors)
    b0, b1 = BORDER_INSET, BORDER_INSET + BORDER_THICKNESS
    canvas[b0:b1, b0 : width - b0] = 0.0
    canvas[height - b1 : height - b0, b0 : width - b0] = 0.0
    canvas[b0 : height - b0, b0:b1] = 0.0
    canvas[b0 : height - b0, width - b1 : width - b0] = 0.0

    x0 = CONTENT_MARGIN
    x1 = width - CONTENT_MARGIN
    max_chars = (x1 - x0 + font.CELL_GAP) // font.CELL_PITCH_PX
    if max_chars < 1:
        raise GeometryError(f"page too narrow for text: {width}")

    usable_rows = (height - 2 * CONTENT_MARGIN - (blocks - 1) * BLOCK_GAP) // ROW_PITCH
    if usable_rows < blocks:
        raise GeometryError(f"page too short for {blocks} blocks: {height}")

    if texts is None:
        spare = usable_rows - blocks
        rows_per_block = []
        for i in range(blocks):
            extra = int(rng.integers(0, 2))
            take = min(extra, spare)
            spare -= take
            rows_per_block.append(1 + take)
        block_rows = [
            [_random_row(rng, max_chars) for _ in range(nr)] for nr in rows_per_block
        ]
    else:
        if len(texts) != blocks:
            raise GeometryError(f"expected {blocks} texts, got {len(texts)}")
        block_rows = [t.split("\n") for t in texts]
        if sum(len(r) for r in block_rows) > usable_rows:
            raise GeometryError("given texts do not fit on the page")

    out_blocks = []
    y = CONTENT_MARGIN
    for rows in block_rows:
        top = y
        drawn_rows = []
        for row in rows:
            drawn_rows.append(_draw_text_row(canvas, x0, y, row, max_chars))
            ry = y + font.GLYPH_H_PX + ROW_RULE_GAP
            canvas[ry : ry + RULE_THICKNESS, x0:x1] = 0.0
            y += ROW_PITCH
        bottom = y - ROW_PITCH + font.GLYPH_H_PX + ROW_RULE_GAP + RULE_THICKNESS
        poly = np.array(
            [
                [x0 - 3.0, top - 3.0],
                [x1 + 2.0, top - 3.0],
                [x1 + 2.0, bottom + 2.0],
                [x0 - 3.0, bottom + 2.0],
            ]
        )
        out_blocks.append(Block(polygon=poly, text="\n".join(drawn_rows)))
        y += BLOCK_GAP

    if soften:
        canvas = _soften(canvas)
    return RasterImage(canvas), BlockLayout(tuple(out_blocks))
