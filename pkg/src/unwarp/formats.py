"""File formats: DMAP1 grids/maps, DFLO1 flow fields, PNG images, layouts.

Binary layout shared by DMAP1 and DFLO1 (little-endian):

    magic (5 bytes) + pad byte + u16 version=1 + u32 rows + u32 cols
    + rows*cols*2 float32 payload, (x, y) interleaved, row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadMagicError, FormatError
from .geometry import BackwardMap, ForegroundMask, Grid2D, RasterImage

MAP_MAGIC = b"DMAP1"
FLOW_MAGIC = b"DFLO1"
_HEADER = struct.Struct("<5sxHII")  # magic, pad, version, rows, cols
_VERSION = 1
_U32_MAX = 0xFFFFFFFF


def _pack_field(arr: np.ndarray, magic: bytes) -> bytes:
    rows, cols = arr.shape[0], arr.shape[1]
    if rows > _U32_MAX or cols > _U32_MAX or rows * cols > _U32_MAX:
        raise FormatError(f"dimensions {rows}x{cols} overflow the 32-bit format")
    payload = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise FormatError("payload contains non-finite values")
    return _HEADER.pack(magic, _VERSION, rows, cols) + payload.tobytes()


def _unpack_field(raw: bytes, magic: bytes, path) -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got_magic, version, rows, cols = _HEADER.unpack_from(raw)
    if got_magic != magic:
        raise BadMagicError(f"{path}: expected magic {magic!r}, found {got_magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + rows * cols * 2 * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: size {len(raw)} != expected {expected} for {rows}x{cols}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols, 2)
    out = data.astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return out


def write_map(path, m: BackwardMap) -> None:
    Path(path).write_bytes(_pack_field(m.coords, MAP_MAGIC))


def read_map(path) -> BackwardMap:
    return BackwardMap(_unpack_field(Path(path).read_bytes(), MAP_MAGIC, path))


def write_grid(path, g: Grid2D) -> None:
    Path(path).write_bytes(_pack_field(g.points, MAP_MAGIC))


def read_grid(path) -> Grid2D:
    return Grid2D(_unpack_field(Path(path).read_bytes(), MAP_MAGIC, path))


def grid_to_bytes(g: Grid2D) -> bytes:
    return _pack_field(g.points, MAP_MAGIC)


def grid_from_bytes(raw: bytes, origin="<bytes>") -> Grid2D:
    return Grid2D(_unpack_field(raw, MAP_MAGIC, origin))


def write_flow(path, vectors: np.ndarray) -> None:
    """Write an (H, W, 2) pixel-displacement field in the DFLO1 format."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 3 or v.shape[2] != 2:
        raise FormatError(f"flow must be (H, W, 2), got {v.shape}")
    Path(path).write_bytes(_pack_field(v, FLOW_MAGIC))


def read_flow(path) -> np.ndarray:
    return _unpack_field(Path(path).read_bytes(), FLOW_MAGIC, path)


def write_image(path, img: RasterImage) -> None:
    arr = np.round(img.data * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_image(path) -> RasterImage:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode not in ("1", "I;16", "I", "F") else "L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return RasterImage(arr)


def write_mask(path, mask: ForegroundMask) -> None:
    Image.fromarray(mask.data * np.uint8(255), mode="L").save(path, format="PNG")


def read_mask(path) -> ForegroundMask:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return ForegroundMask(arr != 0)


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    it = iter(range(len(text)))
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def write_layout(path, blocks) -> None:
    """Write a block layout: one line per block, 'x,y;x,y;...<TAB>text'."""
    lines = []
    for polygon, text in blocks:
        poly = np.asarray(polygon, dtype=np.float64)
        verts = ";".join(f"{x:.4f},{y:.4f}" for x, y in poly)
        lines.append(f"{verts}\t{_escape(text)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_layout(path):
    """Read a block layout back as a list of (polygon (K,2) array, text)."""
    blocks = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        if "\t" not in raw:
            raise FormatError(f"{path}: layout record lacks a tab separator: {raw!r}")
        verts, text = raw.split("\t", 1)
        try:
            pts = np.array(
                [[float(c) for c in v.split(",")] for v in verts.split(";")],
                dtype=np.float64,
            )
        except ValueError as exc:
            raise FormatError(f"{path}: bad polygon in layout: {verts!r}") from exc
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise FormatError(f"{path}: polygon needs >= 3 (x, y) vertices: {verts!r}")
        blocks.append((pts, _unescape(text)))
    return blocks
