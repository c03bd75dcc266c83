"""Seeded suites of distorted documents spanning a difficulty ladder."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DistortionSpecError
from ..formats import (
    read_image,
    read_layout,
    read_map,
    read_mask,
    write_image,
    write_layout,
    write_map,
    write_mask,
)
from ..geometry import AffineTransform2D
from ..metrics.ocr import BlockLayout
from .distort import (
    DistortionSpec,
    SyntheticSample,
    TpsWarpSpec,
    WaveSpec,
    check_injective,
    distort,
    forward_map,
    spec_from_text,
    spec_to_text,
)
from .render import PAGE_H, PAGE_W, render_page

DIFFICULTIES = ("affine-only", "+smooth", "+fine", "+crop", "+background")


def _sample_affine(rng: np.random.Generator, big: bool) -> AffineTransform2D:
    rot = rng.uniform(-0.15, 0.15)
    if big:
        sx = rng.uniform(0.78, 0.95)
        sy = rng.uniform(0.78, 0.95)
        tx, ty = rng.uniform(-0.05, 0.05, 2)
    else:
        sx = rng.uniform(0.6, 0.8)
        sy = rng.uniform(0.6, 0.8)
        tx, ty = rng.uniform(-0.08, 0.08, 2)
    shear = rng.uniform(-0.06, 0.06)
    c, s = np.cos(rot), np.sin(rot)
    lin = np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]])
    lin = lin @ np.diag([sx, sy])
    return AffineTransform2D.from_parts(lin, [tx, ty])


def _sample_wave(rng, n_max, amp_total, freq_lo, freq_hi) -> WaveSpec:
    def axis_modes():
        k = int(rng.integers(1, n_max + 1))
        amps = rng.dirichlet(np.ones(k)) * amp_total * rng.uniform(0.5, 1.0)
        rows = []
        for a in amps:
            ang = rng.uniform(0, 2 * np.pi)
            f = rng.uniform(freq_lo, freq_hi)
            rows.append([a, f * np.cos(ang), f * np.sin(ang), rng.uniform(0, 2 * np.pi)])
        return np.array(rows)

    return WaveSpec(axis_modes(), axis_modes())


def _sample_tps(rng) -> TpsWarpSpec:
    k = int(rng.integers(6, 13))
    centers = rng.uniform(-0.9, 0.9, (k, 2))
    disp = rng.uniform(-0.035, 0.035, (k, 2))
    return TpsWarpSpec(centers, disp)


def _page_extent(spec: DistortionSpec) -> float:
    fmap = forward_map(spec)
    edge = np.linspace(-1.0, 1.0, 33)
    border = np.concatenate(
        [
            np.stack([edge, np.full_like(edge, -1.0)], 1),
            np.stack([edge, np.full_like(edge, 1.0)], 1),
            np.stack([np.full_like(edge, -1.0), edge], 1),
            np.stack([np.full_like(edge, 1.0), edge], 1),
        ]
    )
    return float(np.abs(fmap.eval(border)).max())


def sample_spec(rng: np.random.Generator, difficulty: str, seed: int = 0) -> DistortionSpec:
    """Draw one distortion spec at the requested (cumulative) difficulty."""
    if difficulty not in DIFFICULTIES:
        raise DistortionSpecError(
            f"unknown difficulty {difficulty!r}; expected one of {DIFFICULTIES}"
        )
    level = DIFFICULTIES.index(difficulty)
    cropped = level >= 3
    for _ in range(64):
        kwargs = dict(seed=seed, affine=_sample_affine(rng, big=cropped))
        if level >= 1:
            if rng.random() < 0.3:
                kwargs["smooth_tps"] = _sample_tps(rng)
            else:
                kwargs["smooth_wave"] = _sample_wave(
                    rng, n_max=2, amp_total=0.05, freq_lo=1.2, freq_hi=2.6
                )
        if level >= 2:
            kwargs["fine_wave"] = _sample_wave(
                rng, n_max=2, amp_total=0.004, freq_lo=20.0, freq_hi=28.0
            )
        if cropped:
            frac = rng.uniform(0.7, 0.85)
            ox, oy = rng.uniform(-0.12, 0.12, 2)
            kwargs["boundary"] = ("cropped", float(frac), float(ox), float(oy))
        if level >= 4:
            kwargs["background"] = ("textured", int(rng.integers(0, 2**31)))
        try:
            spec = DistortionSpec(**kwargs)
        except DistortionSpecError:
            continue
        if check_injective(forward_map(spec)) <= 0.0:
            continue
        extent = _page_extent(spec)
        if cropped:
            if extent > 1.05:  # page must actually cross the frame edge
                return spec
        elif extent <= 0.97:
            return spec
    raise DistortionSpecError(f"could not sample a valid spec for {difficulty!r}")


def make_suite(
    n: int,
    seed: int,
    difficulty: str,
    out_dir=None,
    height: int = PAGE_H,
    width: int = PAGE_W,
    blocks: int | None = None,
):
    """Generate n deterministic samples; optionally write them to disk."""
    if n < 1:
        raise DistortionSpecError("suite size must be >= 1")
    if difficulty not in DIFFICULTIES:
        raise DistortionSpecError(
            f"unknown difficulty {difficulty!r}; expected one of {DIFFICULTIES}"
        )
    level = DIFFICULTIES.index(difficulty)
    children = np.random.SeedSequence(entropy=[int(seed), level]).spawn(n)
    samples = []
    for child in children:
        rng = np.random.default_rng(child)
        page_seed = int(rng.integers(0, 2**31))
        nblocks = int(rng.integers(2, 5)) if blocks is None else blocks
        flat, layout = render_page(page_seed, nblocks, height, width)
        spec = sample_spec(rng, difficulty, seed=page_seed)
        samples.append(distort(flat, layout, spec))
    if out_dir is not None:
        write_suite(out_dir, samples, seed=seed, difficulty=difficulty)
    return samples


def write_suite(out_dir, samples, seed: int = 0, difficulty: str = "affine-only") -> None:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    records = [f"# unwarp-suite n={len(samples)} seed={seed} difficulty={difficulty}"]
    for i, s in enumerate(samples):
        sid = f"s{i:03d}"
        sdir = root / sid
        sdir.mkdir(parents=True, exist_ok=True)
        write_image(sdir / "flat.png", s.flat)
        write_image(sdir / "distorted.png", s.distorted)
        write_mask(sdir / "mask.png", s.mask)
        write_map(sdir / "gt.dmap", s.gt_backward)
        write_layout(sdir / "layout.txt", [(b.polygon, b.text) for b in s.layout])
        spec_text = spec_to_text(s.spec)
        (sdir / "spec.txt").write_text(spec_text, encoding="utf-8")
        one_line = spec_text.strip().replace("\n", ";;")
        records.append(
            f"{sid}\t{sid}/flat.png\t{sid}/distorted.png\t{sid}/mask.png"
            f"\t{sid}/gt.dmap\t{sid}/layout.txt\t{one_line}"
        )
    (root / "manifest.txt").write_text("\n".join(records) + "\n", encoding="utf-8")


def load_suite(suite_dir):
    """Read a written suite back as [(sample_id, SyntheticSample), ...]."""
    root = Path(suite_dir)
    manifest = root / "manifest.txt"
    out = []
    for raw in manifest.read_text(encoding="utf-8").splitlines():
        if not raw.strip() or raw.startswith("#"):
            continue
        sid, flat_p, dist_p, mask_p, gt_p, layout_p, spec_line = raw.split("\t")
        sample = SyntheticSample(
            flat=read_image(root / flat_p),
            distorted=read_image(root / dist_p),
            gt_backward=read_map(root / gt_p),
            mask=read_mask(root / mask_p),
            layout=BlockLayout.from_pairs(read_layout(root / layout_p)),
            spec=spec_from_text(spec_line),
        )
        out.append((sid, sample))
    return out
