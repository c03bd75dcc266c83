"""Deterministic 5x7 pseudo-glyph font for printable ASCII.

Every glyph carries a full-height bar in column 0 and a full-width bar
in the bottom row; the four interior columns hold vertical stroke runs
keyed by the character code.  The fixed bars give the mock OCR exact row
and column anchors, the stroke runs make all glyphs distinct, and the
mostly-vertical ink survives resampling far better than speckle would.
"""

from __future__ import annotations

import numpy as np

GLYPH_ROWS = 7
GLYPH_COLS = 5
GLYPH_SCALE = 3  # rendered pixels per font cell
CELL_GAP = 3  # rendered pixels between glyph cells
GLYPH_H_PX = GLYPH_ROWS * GLYPH_SCALE
GLYPH_W_PX = GLYPH_COLS * GLYPH_SCALE
CELL_PITCH_PX = GLYPH_W_PX + CELL_GAP

PRINTABLE = "".join(chr(c) for c in range(33, 127))  # space handled separately


def _char_bitmap(ch: str, salt: int) -> np.ndarray:
    inner_rows = GLYPH_ROWS - 1
    rng = np.random.default_rng(ord(ch) * 1000003 + salt)
    bitmap = np.zeros((GLYPH_ROWS, GLYPH_COLS), dtype=bool)
    bitmap[:, 0] = True
    bitmap[-1, :] = True
    # strokes span two adjacent columns (wide ink resamples cleanly);
    # one extra serif cell disambiguates similar stroke layouts
    while not bitmap[:inner_rows, 1:].any():
        for col in (1, 3):
            kind = rng.integers(0, 16)
            if kind == 0:
                continue  # empty stroke slot
            length = int(rng.integers(2, inner_rows + 1))
            start = int(rng.integers(0, inner_rows - length + 1))
            bitmap[start : start + length, col : col + 2] = True
    if rng.random() < 0.9:
        r = int(rng.integers(0, inner_rows))
        c = int(rng.integers(1, GLYPH_COLS))
        bitmap[r, c] = True
    return bitmap


def _make_font():
    # per-character salt bump on collision keeps all glyphs distinct
    glyphs = {}
    used = set()
    for ch in PRINTABLE:
        for salt in range(10000):
            bm = _char_bitmap(ch, salt)
            key = bm.tobytes()
            if key not in used:
                used.add(key)
                glyphs[ch] = bm
                break
        else:  # pragma: no cover - the stroke space is far larger than ASCII
            raise RuntimeError(f"could not build a distinct glyph for {ch!r}")
    return glyphs


GLYPHS = _make_font()
GLYPHS[" "] = np.zeros((GLYPH_ROWS, GLYPH_COLS), dtype=bool)
_DECODE = {g.tobytes(): ch for ch, g in GLYPHS.items() if ch != " "}


def glyph_bitmap(ch: str) -> np.ndarray:
    """5x7 boolean ink bitmap for a character (unknown chars render as '?')."""
    return GLYPHS.get(ch, GLYPHS["?"])


def render_glyph_px(ch: str) -> np.ndarray:
    """Glyph upscaled to its rendered pixel size."""
    return np.kron(glyph_bitmap(ch), np.ones((GLYPH_SCALE, GLYPH_SCALE), dtype=bool))


def decode_bitmap(bits: np.ndarray) -> str:
    """Map a 5x7 boolean bitmap back to its character.

    Exact matches hit the lookup table; anything else falls back to the
    nearest glyph by Hamming distance (blank wins ties as a space).
    """
    if not bits.any():
        return " "
    exact = _DECODE.get(np.ascontiguousarray(bits).tobytes())
    if exact is not None:
        return exact
    best_ch = " "
    best_d = int(bits.sum())  # distance to the blank glyph
    for ch, g in GLYPHS.items():
        d = int(np.count_nonzero(g != bits))
        if d < best_d:
            best_d = d
            best_ch = ch
    return best_ch
