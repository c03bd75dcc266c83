"""Forward distortion models with exact ground truth.

A distortion is a composition applied to flat-page coordinates:

    f = crop o ripple o smooth o affine

Every part is analytic (values and Jacobians), so the forward map can be
probed for injectivity, inverted by damped Newton for rendering, and
evaluated exactly for ground-truth backward maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DistortionSpecError, NewtonDivergenceError
from ..geometry import (
    AffineTransform2D,
    BackwardMap,
    ForegroundMask,
    Homography2D,
    RasterImage,
    norm_to_pixel,
)
from .. import kernels

SMOOTH_AMP_BOUND = 0.15
FINE_AMP_BOUND = 0.02
FINE_WAVELENGTH_MIN = 0.1
MAX_WAVE_MODES = 3
MAX_TPS_POINTS = 12
BACKGROUND_PLAIN = 0.25


@dataclass(frozen=True, eq=False)
class WaveSpec:
    """Sinusoidal displacement: rows of (amplitude, freq_x, freq_y, phase)."""

    modes_x: np.ndarray  # (kx, 4)
    modes_y: np.ndarray  # (ky, 4)

    def __post_init__(self):
        for name in ("modes_x", "modes_y"):
            m = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 4)
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    def amplitude(self) -> float:
        ax = float(np.abs(self.modes_x[:, 0]).sum()) if self.modes_x.size else 0.0
        ay = float(np.abs(self.modes_y[:, 0]).sum()) if self.modes_y.size else 0.0
        return max(ax, ay)

    def min_wavelength(self) -> float:
        waves = []
        for m in (self.modes_x, self.modes_y):
            if m.size:
                waves.extend(2.0 * np.pi / np.hypot(m[:, 1], m[:, 2]))
        return float(min(waves)) if waves else np.inf

    def n_modes(self) -> int:
        return max(self.modes_x.shape[0], self.modes_y.shape[0])


@dataclass(frozen=True, eq=False)
class TpsWarpSpec:
    """Scattered-point displacement interpolated with a thin-plate spline."""

    centers: np.ndarray  # (K, 2)
    displacements: np.ndarray  # (K, 2)

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        d = np.asarray(self.displacements, dtype=np.float64).reshape(-1, 2)
        if c.shape != d.shape:
            raise DistortionSpecError("centers and displacements must match")
        c.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "displacements", d)

    def amplitude(self) -> float:
        if self.displacements.size == 0:
            return 0.0
        return float(np.abs(self.displacements).max())


@dataclass(frozen=True, eq=False)
class DistortionSpec:
    seed: int = 0
    affine: AffineTransform2D | Homography2D | None = None
    smooth_wave: WaveSpec | None = None
    smooth_tps: TpsWarpSpec | None = None
    fine_wave: WaveSpec | None = None
    boundary: tuple = ("complete",)
    background: tuple = ("none",)

    def __post_init__(self):
        if self.smooth_wave is not None and self.smooth_tps is not None:
            raise DistortionSpecError("choose wave OR tps for the smooth part")
        for s in (self.smooth_wave, self.smooth_tps):
            if s is not None and s.amplitude() > SMOOTH_AMP_BOUND:
                raise DistortionSpecError(
                    f"smooth amplitude {s.amplitude():.4f} exceeds {SMOOTH_AMP_BOUND}"
                )
        if self.smooth_wave is not None and self.smooth_wave.n_modes() > MAX_WAVE_MODES:
            raise DistortionSpecError("too many smooth wave modes")
        if self.smooth_tps is not None and self.smooth_tps.centers.shape[0] > MAX_TPS_POINTS:
            raise DistortionSpecError("too many tps control points")
        f = self.fine_wave
        if f is not None:
            if f.amplitude() > FINE_AMP_BOUND:
                raise DistortionSpecError(
                    f"fine amplitude {f.amplitude():.4f} exceeds {FINE_AMP_BOUND}"
                )
            if f.min_wavelength() < FINE_WAVELENGTH_MIN:
                raise DistortionSpecError(
                    f"fine wavelength {f.min_wavelength():.4f} below {FINE_WAVELENGTH_MIN}"
                )
        if self.boundary[0] not in ("complete", "cropped"):
            raise DistortionSpecError(f"unknown boundary kind {self.boundary!r}")
        if self.boundary[0] == "cropped":
            frac = self.boundary[1]
            if not (0.0 < frac <= 1.0):
                raise DistortionSpecError(f"crop fraction must be in (0, 1], got {frac}")
        if self.background[0] not in ("none", "textured"):
            raise DistortionSpecError(f"unknown background kind {self.background!r}")


# --- analytic map parts ------------------------------------------------------


class _AffinePart:
    def __init__(self, t):
        self.t = t

    def eval(self, p):
        return self.t.apply(p)

    def jac(self, p):
        n = p.shape[0]
        if isinstance(self.t, AffineTransform2D):
            return np.broadcast_to(self.t.m[:, :2], (n, 2, 2)).copy()
        m = self.t.m
        w = p @ m[2, :2] + m[2, 2]
        u = (p @ m[0, :2] + m[0, 2]) / w
        v = (p @ m[1, :2] + m[1, 2]) / w
        j = np.empty((n, 2, 2))
        j[:, 0, 0] = (m[0, 0] - u * m[2, 0]) / w
        j[:, 0, 1] = (m[0, 1] - u * m[2, 1]) / w
        j[:, 1, 0] = (m[1, 0] - v * m[2, 0]) / w
        j[:, 1, 1] = (m[1, 1] - v * m[2, 1]) / w
        return j


class _WavePart:
    def __init__(self, spec: WaveSpec):
        self.spec = spec

    def _disp_and_grad(self, p):
        n = p.shape[0]
        disp = np.zeros((n, 2))
        grad = np.zeros((n, 2, 2))  # grad[:, k] = d(disp_k)/d(x, y)
        for k, modes in enumerate((self.spec.modes_x, self.spec.modes_y)):
            for amp, fx, fy, ph in modes:
                arg = fx * p[:, 0] + fy * p[:, 1] + ph
                disp[:, k] += amp * np.sin(arg)
                c = amp * np.cos(arg)
                grad[:, k, 0] += c * fx
                grad[:, k, 1] += c * fy
        return disp, grad

    def eval(self, p):
        disp, _ = self._disp_and_grad(p)
        return p + disp

    def jac(self, p):
        _, grad = self._disp_and_grad(p)
        grad[:, 0, 0] += 1.0
        grad[:, 1, 1] += 1.0
        return grad


class _TpsPart:
    """Displacement interpolating the spec's vectors at its centers."""

    def __init__(self, spec: TpsWarpSpec):
        from ..lines import ThinPlateSpline

        self.centers = spec.centers
        tps = ThinPlateSpline(spec.centers, spec.displacements)
        self.w = tps._w
        self.a = tps._a

    def _phi_terms(self, p):
        d = p[:, None, :] - self.centers[None, :, :]
        d2 = np.maximum(np.sum(d * d, axis=2), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_d2 = np.where(d2 > 0, np.log(np.maximum(d2, 1e-300)), 0.0)
        phi = 0.5 * d2 * log_d2
        dphi = np.where(d2[:, :, None] > 0, d * (log_d2[:, :, None] + 1.0), 0.0)
        return phi, dphi

    def eval(self, p):
        phi, _ = self._phi_terms(p)
        poly = np.concatenate([np.ones((p.shape[0], 1)), p], axis=1)
        return p + phi @ self.w + poly @ self.a

    def jac(self, p):
        _, dphi = self._phi_terms(p)
        n = p.shape[0]
        j = np.zeros((n, 2, 2))
        for k in range(2):  # output axis
            j[:, k, 0] = dphi[:, :, 0] @ self.w[:, k] + self.a[1, k]
            j[:, k, 1] = dphi[:, :, 1] @ self.w[:, k] + self.a[2, k]
        j[:, 0, 0] += 1.0
        j[:, 1, 1] += 1.0
        return j


class ForwardMap:
    """Composition of analytic parts with values and Jacobians."""

    def __init__(self, parts):
        self.parts = list(parts)

    def eval(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
        for part in self.parts:
            p = part.eval(p)
        return p

    def jac(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
        j = np.broadcast_to(np.eye(2), (p.shape[0], 2, 2)).copy()
        for part in self.parts:
            j = part.jac(p) @ j
            p = part.eval(p)
        return j


def crop_transform(boundary) -> AffineTransform2D | None:
    if boundary[0] != "cropped":
        return None
    _, frac, cx, cy = boundary
    s = 1.0 / frac
    return AffineTransform2D(np.array([[s, 0.0, -cx * s], [0.0, s, -cy * s]]))


def forward_map(spec: DistortionSpec) -> ForwardMap:
    parts = []
    if spec.affine is not None:
        parts.append(_AffinePart(spec.affine))
    if spec.smooth_wave is not None:
        parts.append(_WavePart(spec.smooth_wave))
    if spec.smooth_tps is not None:
        parts.append(_TpsPart(spec.smooth_tps))
    if spec.fine_wave is not None:
        parts.append(_WavePart(spec.fine_wave))
    crop = crop_transform(spec.boundary)
    if crop is not None:
        parts.append(_AffinePart(crop))
    return ForwardMap(parts)


def affine_skeleton(spec: DistortionSpec):
    """The affine/projective backbone of the map (crop o affine), used as
    the Newton initial guess."""
    base = spec.affine if spec.affine is not None else AffineTransform2D.identity()
    crop = crop_transform(spec.boundary)
    if crop is None:
        return base
    if isinstance(base, Homography2D):
        return Homography2D(crop.as_matrix3() @ base.m)
    return crop @ base


def check_injective(fmap: ForwardMap, n: int = 128) -> float:
    """Min Jacobian determinant over an n x n probe of the page domain."""
    xs = np.linspace(-1.0, 1.0, n)
    px, py = np.meshgrid(xs, xs)
    pts = np.stack([px.ravel(), py.ravel()], axis=1)
    j = fmap.jac(pts)
    det = j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] * j[:, 1, 0]
    return float(det.min())


def invert_forward(fmap: ForwardMap, targets: np.ndarray, init: np.ndarray,
                   tol: float = 1e-6, max_iter: int = 20):
    """Damped Newton solve of f(p) = target. Returns (p, converged)."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    p = np.array(init, dtype=np.float64).reshape(-1, 2).copy()
    n = p.shape[0]
    active_idx = np.arange(n)
    converged = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        pa = p[active_idx]
        r = fmap.eval(pa) - targets[active_idx]
        err = np.abs(r).max(axis=1)
        done = err < tol
        if done.any():
            converged[active_idx[done]] = True
            active_idx = active_idx[~done]
            pa = pa[~done]
            r = r[~done]
        if active_idx.size == 0:
            break
        j = fmap.jac(pa)
        det = j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] * j[:, 1, 0]
        det = np.where(np.abs(det) < 1e-12, np.where(det < 0, -1e-12, 1e-12), det)
        dx = (r[:, 0] * j[:, 1, 1] - r[:, 1] * j[:, 0, 1]) / det
        dy = (j[:, 0, 0] * r[:, 1] - j[:, 1, 0] * r[:, 0]) / det
        step = np.stack([dx, dy], axis=1)
        norm = np.max(np.abs(step), axis=1, keepdims=True)
        step = np.where(norm > 0.5, step * (0.5 / norm), step)
        p[active_idx] = pa - step
    if active_idx.size:
        r = fmap.eval(p[active_idx]) - targets[active_idx]
        converged[active_idx] = np.abs(r).max(axis=1) < tol
    return p, converged


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    """One generated fixture and its exact ground truth."""

    flat: RasterImage
    distorted: RasterImage
    gt_backward: BackwardMap
    mask: ForegroundMask
    layout: object  # BlockLayout
    spec: DistortionSpec


def _textured_background(seed: int, h: int, w: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    coarse = 0.15 + 0.4 * rng.random((9, 7))
    u = np.linspace(0, 6, w)
    v = np.linspace(0, 8, h)
    uu = np.broadcast_to(u[None, :], (h, w)).ravel()
    vv = np.broadcast_to(v[:, None], (h, w)).ravel()
    field = np.stack([coarse, coarse], axis=2)
    bg = kernels.sample_field(field, uu, vv)[:, 0].reshape(h, w)
    # straight clutter bars, so stage-1 localization faces distractor lines
    n_bars = int(rng.integers(3, 7))
    for _ in range(n_bars):
        p0 = rng.random(2) * [w - 1, h - 1]
        p1 = rng.random(2) * [w - 1, h - 1]
        thick = int(rng.integers(1, 4))
        val = 0.05 + 0.15 * rng.random()
        steps = int(np.hypot(*(p1 - p0))) * 2 + 1
        ts = np.linspace(0.0, 1.0, steps)
        xs = np.clip(np.round(p0[0] + ts * (p1[0] - p0[0])).astype(int), 0, w - 1)
        ys = np.clip(np.round(p0[1] + ts * (p1[1] - p0[1])).astype(int), 0, h - 1)
        for dy in range(-thick, thick + 1):
            yy = np.clip(ys + dy, 0, h - 1)
            bg[yy, xs] = val
    return bg


def distort(flat: RasterImage, layout, spec: DistortionSpec) -> SyntheticSample:
    """Apply a distortion spec to a flat page with exact ground truth.

    The distorted view is rendered by inverting the forward map per pixel
    (damped Newton); the ground-truth backward map stores, for every
    flat-frame coordinate, its location in the distorted view.
    """
    fmap = forward_map(spec)
    min_det = check_injective(fmap)
    if min_det <= 0.0:
        raise DistortionSpecError(
            f"forward map not injective on the page (min det {min_det:.3e})"
        )
    h, w = flat.height, flat.width
    ident = BackwardMap.identity(h, w)
    q = ident.coords.reshape(-1, 2)

    skel = affine_skeleton(spec)
    init = skel.invert().apply(q)
    # only pixels whose affine-skeleton preimage is near the page can show
    # page content; skipping the rest keeps Newton off background pixels
    relevant = np.max(np.abs(init), axis=1) <= 1.3
    p = init.copy()
    converged = np.zeros(q.shape[0], dtype=bool)
    if relevant.any():
        p[relevant], converged[relevant] = invert_forward(fmap, q[relevant], init[relevant])
    near_page = np.max(np.abs(p), axis=1) <= 1.05
    bad = ~converged & near_page
    if bad.any():
        k = int(np.nonzero(bad)[0][0])
        raise NewtonDivergenceError(
            f"map inversion diverged near pixel (row {k // w}, col {k % w})"
        )

    px = norm_to_pixel(p[:, 0], w)
    py = norm_to_pixel(p[:, 1], h)
    vals, oob = kernels.sample_image(flat.data, px, py, np.zeros(flat.channels))
    inside = (oob == 0) & converged
    if spec.background[0] == "textured":
        bg = _textured_background(spec.background[1], h, w)
    else:
        bg = np.full((h, w), BACKGROUND_PLAIN)
    data = np.where(
        inside.reshape(h, w)[:, :, None], vals.reshape(h, w, flat.channels),
        bg[:, :, None],
    )
    distorted = RasterImage(data)
    mask = ForegroundMask(inside.reshape(h, w))
    gt = BackwardMap(fmap.eval(q).reshape(h, w, 2))
    return SyntheticSample(
        flat=flat, distorted=distorted, gt_backward=gt, mask=mask,
        layout=layout, spec=spec,
    )


def true_flow(spec: DistortionSpec, d: BackwardMap, gt_h: int, gt_w: int) -> np.ndarray:
    """Exact rectified->GT pixel-displacement field for a rendered map.

    For each output pixel of d, the sampled distorted-frame coordinate is
    pulled back through the forward map to its flat-page position; the
    displacement from the output pixel to that position is the flow.
    """
    fmap = forward_map(spec)
    src = d.coords.reshape(-1, 2)
    skel = affine_skeleton(spec)
    p, _ = invert_forward(fmap, src, skel.invert().apply(src), tol=1e-8, max_iter=40)
    gx = norm_to_pixel(p[:, 0], gt_w)
    gy = norm_to_pixel(p[:, 1], gt_h)
    jj = np.broadcast_to(np.arange(d.width)[None, :], (d.height, d.width)).ravel()
    ii = np.broadcast_to(np.arange(d.height)[:, None], (d.height, d.width)).ravel()
    flow = np.stack([gx - jj, gy - ii], axis=1)
    return flow.reshape(d.height, d.width, 2)


# --- spec serialization ------------------------------------------------------


def _fmt_floats(arr) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(arr, dtype=np.float64).ravel())


def _fmt_rows(arr) -> str:
    a = np.asarray(arr, dtype=np.float64)
    return ";".join(_fmt_floats(row) for row in a.reshape(a.shape[0], -1))


def _parse_rows(text: str, width: int) -> np.ndarray:
    if not text:
        return np.zeros((0, width))
    return np.array(
        [[float(v) for v in row.split(",")] for row in text.split(";")], dtype=np.float64
    )


def spec_to_text(spec: DistortionSpec) -> str:
    lines = [f"seed={spec.seed}"]
    if isinstance(spec.affine, Homography2D):
        lines.append(f"homography={_fmt_floats(spec.affine.m)}")
    elif spec.affine is not None:
        lines.append(f"affine={_fmt_floats(spec.affine.m)}")
    if spec.smooth_wave is not None:
        lines.append(f"smooth_wave_x={_fmt_rows(spec.smooth_wave.modes_x)}")
        lines.append(f"smooth_wave_y={_fmt_rows(spec.smooth_wave.modes_y)}")
    if spec.smooth_tps is not None:
        lines.append(f"smooth_tps_centers={_fmt_rows(spec.smooth_tps.centers)}")
        lines.append(f"smooth_tps_disp={_fmt_rows(spec.smooth_tps.displacements)}")
    if spec.fine_wave is not None:
        lines.append(f"fine_wave_x={_fmt_rows(spec.fine_wave.modes_x)}")
        lines.append(f"fine_wave_y={_fmt_rows(spec.fine_wave.modes_y)}")
    lines.append("boundary=" + ",".join(repr(v) if isinstance(v, float) else str(v)
                                        for v in spec.boundary))
    lines.append("background=" + ",".join(str(v) for v in spec.background))
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> DistortionSpec:
    kv = {}
    for raw in text.replace(";;", "\n").splitlines():
        raw = raw.strip()
        if not raw or "=" not in raw:
            continue
        k, v = raw.split("=", 1)
        kv[k.strip()] = v.strip()

    affine = None
    if "homography" in kv:
        affine = Homography2D(np.array([float(v) for v in kv["homography"].split(",")]).reshape(3, 3))
    elif "affine" in kv:
        affine = AffineTransform2D(np.array([float(v) for v in kv["affine"].split(",")]).reshape(2, 3))

    smooth_wave = None
    if "smooth_wave_x" in kv or "smooth_wave_y" in kv:
        smooth_wave = WaveSpec(
            _parse_rows(kv.get("smooth_wave_x", ""), 4),
            _parse_rows(kv.get("smooth_wave_y", ""), 4),
        )
    smooth_tps = None
    if "smooth_tps_centers" in kv:
        smooth_tps = TpsWarpSpec(
            _parse_rows(kv["smooth_tps_centers"], 2),
            _parse_rows(kv["smooth_tps_disp"], 2),
        )
    fine_wave = None
    if "fine_wave_x" in kv or "fine_wave_y" in kv:
        fine_wave = WaveSpec(
            _parse_rows(kv.get("fine_wave_x", ""), 4),
            _parse_rows(kv.get("fine_wave_y", ""), 4),
        )

    boundary = ("complete",)
    if "boundary" in kv and kv["boundary"] != "complete":
        parts = kv["boundary"].split(",")
        boundary = (parts[0], float(parts[1]), float(parts[2]), float(parts[3]))
    background = ("none",)
    if "background" in kv and kv["background"] != "none":
        parts = kv["background"].split(",")
        background = (parts[0], int(parts[1]))

    return DistortionSpec(
        seed=int(kv.get("seed", "0")),
        affine=affine,
        smooth_wave=smooth_wave,
        smooth_tps=smooth_tps,
        fine_wave=fine_wave,
        boundary=boundary,
        background=background,
    )
