"""Mock OCR engine that decodes rendered pseudo-glyph pages exactly."""

from __future__ import annotations

import numpy as np

from ..geometry import RasterImage
from . import font

INK_THRESHOLD = 0.5
_RULE_MAX_HEIGHT = 5  # bands thinner than this are ruled lines, not text


def _bands(ink: np.ndarray):
    """Contiguous runs of rows that contain ink."""
    rows = ink.any(axis=1)
    bands = []
    start = None
    for i, r in enumerate(rows):
        if r and start is None:
            start = i
        elif not r and start is not None:
            bands.append((start, i))
            start = None
    if start is not None:
        bands.append((start, len(rows)))
    return bands


def _decode_band(ink: np.ndarray) -> str:
    cols = ink.any(axis=0)
    if not cols.any():
        return ""
    x0 = int(np.argmax(cols))
    x1 = int(len(cols) - np.argmax(cols[::-1]))
    n_cells = int(round((x1 - x0 - font.GLYPH_W_PX) / font.CELL_PITCH_PX)) + 1
    n_cells = max(n_cells, 1)
    h = ink.shape[0]
    chars = []
    for i in range(n_cells):
        cx = x0 + i * font.CELL_PITCH_PX
        cell = ink[:, cx : cx + font.GLYPH_W_PX]
        if cell.shape[1] < font.GLYPH_W_PX:
            pad = np.zeros((h, font.GLYPH_W_PX - cell.shape[1]), dtype=bool)
            cell = np.concatenate([cell, pad], axis=1)
        if cell.shape[0] != font.GLYPH_H_PX:
            # nearest-row resample when the band height is off nominal
            src = np.linspace(0, cell.shape[0] - 1, font.GLYPH_H_PX)
            cell = cell[np.round(src).astype(int)]
        bits = np.zeros((font.GLYPH_ROWS, font.GLYPH_COLS), dtype=bool)
        s = font.GLYPH_SCALE
        for r in range(font.GLYPH_ROWS):
            for c in range(font.GLYPH_COLS):
                frac = cell[r * s : (r + 1) * s, c * s : (c + 1) * s].mean()
                bits[r, c] = frac >= 0.5
        chars.append(font.decode_bitmap(bits))
    return "".join(chars).rstrip()


class GlyphOcr:
    """Decodes regions rendered with the package's pseudo-glyph font.

    Deterministic; exact on unwarped renders, nearest-glyph fallback on
    mildly degraded ones.
    """

    def recognize(self, img: RasterImage) -> str:
        ink = img.to_gray() < INK_THRESHOLD
        lines = []
        for y0, y1 in _bands(ink):
            if (y1 - y0) <= _RULE_MAX_HEIGHT:
                continue  # ruled line
            lines.append(_decode_band(ink[y0:y1]))
        return "\n".join(lines)
