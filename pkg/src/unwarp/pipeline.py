"""Three-stage rectification cascade composed into one backward map.

Stage 1 fits a global transform from a localization grid and renders a
normalized view; stage 2 composes a coarse backward grid with the inverse
transform; stage 3 iteratively refines with new fields, chained by map
composition.  Every intermediate map addresses the ORIGINAL image, so the
final output is rendered with a single sampling pass at full resolution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .affine_fit import FitKind, MarginConfig, stage1_transform
from .errors import PredictorError
from .formats import grid_from_bytes, read_grid
from .geometry import BackwardMap, Grid2D, RasterImage, canonical_grid
from .lines import StoppingConfig, StoppingTrace, adaptive_stop
from .warp import (
    compose_affine_into_map,
    compose_maps,
    densify_grid,
    invert_map,
    resize_image,
    warp_affine,
    warp_by_map,
)


class GridPredictor(Protocol):
    """A stage predictor: working-resolution render in, control grid out."""

    def predict(self, img: RasterImage) -> Grid2D: ...


@dataclass(frozen=True)
class PipelineConfig:
    work_h: int = 712
    work_w: int = 488
    grid_h: int = 45
    grid_w: int = 31
    margin: MarginConfig = field(default_factory=MarginConfig)
    fit_kind: FitKind = FitKind.AFFINE
    stopping: StoppingConfig = field(default_factory=StoppingConfig)
    policy: str = "adaptive"  # "adaptive" | "fixed"
    fixed_iterations: int = 0
    out_h: int | None = None
    out_w: int | None = None
    keep_outputs: bool = False

    def __post_init__(self):
        if self.policy not in ("adaptive", "fixed"):
            raise PredictorError(f"unknown iteration policy {self.policy!r}")
        if not (0 <= self.fixed_iterations <= self.stopping.max_iterations):
            raise PredictorError(
                "fixed_iterations must lie in [0, stopping.max_iterations]"
            )


@dataclass(frozen=True)
class RectificationTrace:
    """Full record of one run: transform, map chain, stopping, renders."""

    transform: object
    maps: tuple
    stop: StoppingTrace | None
    outputs: tuple | None
    timings: dict
    final: RasterImage
    final_map: BackwardMap

    @property
    def n_opt(self) -> int:
        return len(self.maps) - 1


def default_output_dims(in_h: int, in_w: int, cfg: PipelineConfig):
    """Working aspect ratio scaled to roughly the input's pixel count."""
    if cfg.out_h is not None and cfg.out_w is not None:
        return cfg.out_h, cfg.out_w
    n = in_h * in_w
    out_h = int(round(np.sqrt(n * cfg.work_h / cfg.work_w)))
    out_w = int(round(np.sqrt(n * cfg.work_w / cfg.work_h)))
    return max(out_h, 2), max(out_w, 2)


def _checked_predict(net: GridPredictor, img: RasterImage, cfg: PipelineConfig,
                     stage: str) -> Grid2D:
    try:
        grid = net.predict(img)
    except PredictorError:
        raise
    except Exception as exc:  # noqa: BLE001 - predictor adapters can fail arbitrarily
        raise PredictorError(f"stage {stage} predictor failed: {exc}") from exc
    if not isinstance(grid, Grid2D):
        raise PredictorError(f"stage {stage} predictor returned {type(grid)!r}")
    if (grid.rows, grid.cols) != (cfg.grid_h, cfg.grid_w):
        raise PredictorError(
            f"stage {stage} grid is {grid.rows}x{grid.cols}, "
            f"expected {cfg.grid_h}x{cfg.grid_w}"
        )
    return grid


def rectify(
    i0: RasterImage,
    l_net: GridPredictor,
    c_net: GridPredictor,
    f_net: GridPredictor,
    cfg: PipelineConfig = PipelineConfig(),
) -> RectificationTrace:
    """Run the full cascade on one image.

    The refinement loop evaluates candidate fields lazily: the stage-3
    predictor runs once per considered iteration and a rejected field is
    discarded without being composed.
    """
    timings = {}
    wh, ww = cfg.work_h, cfg.work_w
    e0 = canonical_grid(cfg.grid_h, cfg.grid_w)

    t0 = time.perf_counter()
    work = resize_image(i0, wh, ww)
    g0 = _checked_predict(l_net, work, cfg, "L")
    transform = stage1_transform(g0, e0, cfg.fit_kind, cfg.margin)
    o0 = warp_affine(i0, transform, wh, ww)
    timings["stage1_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    g1 = _checked_predict(c_net, o0, cfg, "C")
    d1 = compose_affine_into_map(g1, transform.invert(), wh, ww)
    o1 = warp_by_map(i0, d1)
    timings["stage2_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    maps = [d1]
    outputs = [o0, o1]
    state = {"d": d1, "o": o1, "pending": None, "calls": 0}

    def compose_pending():
        if state["pending"] is None:
            return
        d_new = compose_maps(state["d"], densify_grid(state["pending"], wh, ww))
        o_new = warp_by_map(i0, d_new)
        maps.append(d_new)
        outputs.append(o_new)
        state.update(d=d_new, o=o_new, pending=None)

    def provider(n: int) -> Grid2D:
        compose_pending()
        state["calls"] += 1
        g = _checked_predict(f_net, state["o"], cfg, f"F{n}")
        state["pending"] = g
        return g

    stop: StoppingTrace | None = None
    if cfg.policy == "adaptive":
        stop = adaptive_stop(o1, provider, cfg.stopping)
        if stop.fallback_used:
            for n in range(1, stop.n_opt + 1):
                provider(n)
            compose_pending()
        elif stop.n_opt == state["calls"]:
            compose_pending()
        else:
            state["pending"] = None  # rejected field, never composed
    else:
        for n in range(1, cfg.fixed_iterations + 1):
            provider(n)
        compose_pending()
    timings["stage3_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    out_h, out_w = default_output_dims(i0.height, i0.width, cfg)
    d_last = state["d"]
    if (out_h, out_w) == (d_last.height, d_last.width):
        final_map = d_last
    else:
        final_map = compose_maps(d_last, BackwardMap.identity(out_h, out_w))
    final = warp_by_map(i0, final_map)
    timings["render_s"] = time.perf_counter() - t0

    return RectificationTrace(
        transform=transform,
        maps=tuple(maps),
        stop=stop,
        outputs=tuple(outputs) if cfg.keep_outputs else None,
        timings=timings,
        final=final,
        final_map=final_map,
    )


# --- predictors --------------------------------------------------------------


class IdentityPredictor:
    """Always predicts the canonical grid (no deformation)."""

    def __init__(self, grid_h: int = 45, grid_w: int = 31):
        self._grid = canonical_grid(grid_h, grid_w)

    def predict(self, img: RasterImage) -> Grid2D:
        return self._grid


def identity_predictors(cfg: PipelineConfig = PipelineConfig()):
    p = IdentityPredictor(cfg.grid_h, cfg.grid_w)
    return p, p, p


class _OracleState:
    def __init__(self, truth, cfg: PipelineConfig):
        import dataclasses

        from .synth import affine_skeleton, forward_map

        self.cfg = cfg
        self.fmap = forward_map(truth.spec)
        self.skeleton = affine_skeleton(truth.spec)
        e0 = canonical_grid(cfg.grid_h, cfg.grid_w)
        self.e0 = e0
        self.e0_flat = e0.points.reshape(-1, 2)
        # locations of the canonical lattice inside the distorted frame
        self.targets = self.fmap.eval(self.e0_flat)
        # the coarse stage corrects everything except the fine ripple,
        # which is left for the iterative refinement stage
        coarse_spec = dataclasses.replace(truth.spec, fine_wave=None)
        self.coarse_targets = forward_map(coarse_spec).eval(self.e0_flat)
        self.transform = None
        self.d = None
        self.pending = None

    def reset(self):
        self.transform = None
        self.d = None
        self.pending = None

    def g0(self) -> Grid2D:
        gh, gw = self.cfg.grid_h, self.cfg.grid_w
        return Grid2D(self.targets.reshape(gh, gw, 2))

    def ensure_transform(self):
        if self.transform is None:
            self.transform = stage1_transform(
                self.g0(), self.e0, self.cfg.fit_kind, self.cfg.margin
            )
        return self.transform


class _OracleL:
    def __init__(self, state: _OracleState):
        self.state = state

    def predict(self, img: RasterImage) -> Grid2D:
        self.state.reset()  # L starts a fresh run
        return self.state.g0()


class _OracleC:
    def __init__(self, state: _OracleState):
        self.state = state

    def predict(self, img: RasterImage) -> Grid2D:
        st = self.state
        a = st.ensure_transform()
        gh, gw = st.cfg.grid_h, st.cfg.grid_w
        grid = Grid2D(a.apply(st.coarse_targets).reshape(gh, gw, 2))
        # replay the pipeline's composition to track its cumulative map
        st.d = compose_affine_into_map(grid, a.invert(), st.cfg.work_h, st.cfg.work_w)
        st.pending = None
        return grid


#: Residual below which the refinement oracle reports "no deformation":
#: leftovers this small are not resolvable at control-grid resolution.
ORACLE_RESIDUAL_FLOOR = 1e-3


class _OracleF:
    def __init__(self, state: _OracleState):
        self.state = state

    def predict(self, img: RasterImage) -> Grid2D:
        st = self.state
        if st.d is None:
            raise PredictorError("oracle F called before the coarse stage")
        if st.pending is not None:
            st.d = compose_maps(
                st.d, densify_grid(st.pending, st.cfg.work_h, st.cfg.work_w)
            )
            st.pending = None
        q = invert_map(st.d, st.targets, init=st.e0_flat)
        if np.abs(q - st.e0_flat).max() < ORACLE_RESIDUAL_FLOOR:
            q = st.e0_flat  # converged: an exact no-op field
        gh, gw = st.cfg.grid_h, st.cfg.grid_w
        grid = Grid2D(q.reshape(gh, gw, 2))
        st.pending = grid
        return grid


def oracle_predictors(truth, cfg: PipelineConfig = PipelineConfig()):
    """Stage predictors derived from a synthetic sample's exact ground truth.

    The cascade converges to the true backward map: L localizes the page
    lattice in the distorted frame, C targets the full ground-truth map,
    and F predicts the residual against the current cumulative map (its
    replica of the pipeline state tracks the lazily-composed fields).
    Build one triple per rectification run.
    """
    state = _OracleState(truth, cfg)
    return _OracleL(state), _OracleC(state), _OracleF(state)


class FileGridSource:
    """Replays stored DMAP1 grids keyed as '<image_id>/<stage>/<n>.dmap'."""

    def __init__(self, root, grid_h: int = 45, grid_w: int = 31):
        self.root = Path(root)
        self.grid_h = grid_h
        self.grid_w = grid_w

    def load(self, key: str) -> Grid2D:
        path = self.root / f"{key}.dmap"
        if not path.is_file():
            raise PredictorError(f"missing grid {key!r}")
        grid = read_grid(path)
        if (grid.rows, grid.cols) != (self.grid_h, self.grid_w):
            from .errors import FormatError

            raise FormatError(
                f"grid {key!r} is {grid.rows}x{grid.cols}, "
                f"expected {self.grid_h}x{self.grid_w}"
            )
        return grid

    def predictor(self, image_id: str, stage: str) -> GridPredictor:
        return _FilePredictor(self, image_id, stage)


class _FilePredictor:
    def __init__(self, source: FileGridSource, image_id: str, stage: str):
        self.source = source
        self.image_id = image_id
        self.stage = stage
        self.n = 0

    def predict(self, img: RasterImage) -> Grid2D:
        key = f"{self.image_id}/{self.stage}/{self.n}"
        self.n += 1
        return self.source.load(key)


def file_predictors(root, image_id: str, grid_h: int = 45, grid_w: int = 31):
    """(L, C, F) predictors replaying grids stored under a directory."""
    src = FileGridSource(root, grid_h, grid_w)
    return (
        src.predictor(image_id, "L"),
        src.predictor(image_id, "C"),
        src.predictor(image_id, "F"),
    )


class SubprocessPredictor:
    """External predictor adapter: PNG path + stage tag in, DMAP1 on stdout."""

    def __init__(self, cmd, stage: str):
        self.cmd = list(cmd)
        self.stage = stage

    def predict(self, img: RasterImage) -> Grid2D:
        import subprocess
        import tempfile

        from .formats import write_image

        with tempfile.TemporaryDirectory(prefix="unwarp-predict-") as td:
            png = Path(td) / "input.png"
            write_image(png, img)
            proc = subprocess.run(
                [*self.cmd, str(png), self.stage], capture_output=True, check=True
            )
        return grid_from_bytes(proc.stdout, origin=f"{self.cmd} {self.stage}")


def subprocess_predictors(cmd):
    return (
        SubprocessPredictor(cmd, "L"),
        SubprocessPredictor(cmd, "C"),
        SubprocessPredictor(cmd, "F"),
    )
