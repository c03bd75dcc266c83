"""Hot sampling/region-growing kernels with a compiled fast path.

The Cython extension is used when it imported cleanly; otherwise the
numpy reference implementation takes over.  Set ``UNWARP_PURE=1`` to
force the reference backend.  Both backends are kept bit-compatible.
"""

from __future__ import annotations

import os

import numpy as np

from . import reference as _reference

if os.environ.get("UNWARP_PURE"):
    _impl = _reference
    BACKEND = "reference"
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]

        BACKEND = "native"
    except ImportError:
        _impl = _reference
        BACKEND = "reference"


def backend_name() -> str:
    return BACKEND


def available_backends() -> dict:
    """Name -> module for every importable backend (used by benchmarks/tests)."""
    out = {"reference": _reference}
    try:
        from . import _native  # type: ignore[attr-defined]

        out["native"] = _native
    except ImportError:
        pass
    return out


def _c1(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def sample_image(img, px, py, fill, backend=None):
    """Bilinear image sampling at flat pixel-coordinate arrays.

    Returns (values (N, C), oob (N,) uint8); out-of-range samples take fill.
    """
    mod = _impl if backend is None else available_backends()[backend]
    img = _c1(img)
    fill = np.broadcast_to(np.atleast_1d(np.asarray(fill, dtype=np.float64)), (img.shape[2],))
    return mod.sample_image(img, _c1(px).ravel(), _c1(py).ravel(), _c1(fill))


def sample_field(field, px, py, backend=None):
    """Bilinear 2-channel field sampling; coordinates clamp to the border."""
    mod = _impl if backend is None else available_backends()[backend]
    return mod.sample_field(_c1(field), _c1(px).ravel(), _c1(py).ravel())


def grow_regions(angle, mag, order, mag_min, tol, backend=None):
    """Label connected gradient-aligned regions; see reference.grow_regions."""
    mod = _impl if backend is None else available_backends()[backend]
    return mod.grow_regions(
        _c1(angle), _c1(mag), _c1(order, dtype=np.intp), float(mag_min), float(tol)
    )
