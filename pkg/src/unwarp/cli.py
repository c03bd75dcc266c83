"""Batch command line: generate fixtures, rectify, evaluate, analyze stopping.

Exit codes: 0 success, 1 partial or processing failure, 2 usage/config
error.  Batches continue past per-image failures and record them in a
machine-readable failures list.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .affine_fit import FitKind, MarginConfig
from .errors import UnwarpError
from .formats import read_flow, read_image, read_layout, read_mask, write_image, write_map
from .geometry import RasterImage
from .lines import StoppingConfig, detect_lines, filter_aligned, line_entropy
from .metrics import (
    BlockLayout,
    DenseFlow,
    PYRAMID_WEIGHTS,
    aligned_distortion,
    axis_aligned_distortion,
    estimate_flow,
    layout_aligned_ocr,
    local_distortion,
    mssim,
    ocr_scores,
    subprocess_ocr,
)
from .pipeline import (
    PipelineConfig,
    file_predictors,
    identity_predictors,
    oracle_predictors,
    rectify,
    subprocess_predictors,
)
from .synth import GlyphOcr, load_suite, make_suite, true_flow
from .metrics.losses import LossWeights

USAGE_ERROR = 2
PARTIAL_ERROR = 1


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline and metrics, with published defaults."""

    work_h: int = 712
    work_w: int = 488
    grid_h: int = 45
    grid_w: int = 31
    margin: float = 0.03
    fit_kind: str = "affine"
    max_iterations: int = 5
    theta_thresh_deg: float = 5.0
    tau: float = 0.99
    iteration_policy: str = "adaptive"  # adaptive | fixed:<k>
    loss_alpha: float = 1.0
    loss_beta: float = 0.05
    loss_gamma: float = 0.2
    loss_lambda: float = 5.0
    mssim_weights: tuple = PYRAMID_WEIGHTS
    workers: int = 0  # 0 = logical cores

    def pipeline_config(self, keep_outputs: bool = False) -> PipelineConfig:
        policy, fixed_k = self.iteration_policy, 0
        if policy.startswith("fixed"):
            policy, _, k = policy.partition(":")
            fixed_k = int(k or 0)
        return PipelineConfig(
            work_h=self.work_h,
            work_w=self.work_w,
            grid_h=self.grid_h,
            grid_w=self.grid_w,
            margin=MarginConfig(self.margin),
            fit_kind=FitKind.parse(self.fit_kind),
            stopping=StoppingConfig(
                max_iterations=self.max_iterations,
                theta_thresh_deg=self.theta_thresh_deg,
                tau=self.tau,
            ),
            policy=policy,
            fixed_iterations=fixed_k,
            keep_outputs=keep_outputs,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            alpha=self.loss_alpha, beta=self.loss_beta,
            gamma=self.loss_gamma, lam=self.loss_lambda,
        )

    def effective_workers(self) -> int:
        env = os.environ.get("UNWARP_WORKERS")
        if env:
            return max(1, int(env))
        if self.workers > 0:
            return self.workers
        return os.cpu_count() or 1


_CONFIG_FIELDS = [f.name for f in dataclasses.fields(RunConfig)]


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name in _CONFIG_FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ",".join(repr(float(x)) for x in v)
        lines.append(f"{name}={v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    kv = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        if "=" not in raw:
            raise UnwarpError(f"bad config line: {raw!r}")
        k, v = raw.split("=", 1)
        kv[k.strip()] = v.strip()
    return _config_from_kv(kv)


def _config_from_kv(kv: dict) -> RunConfig:
    defaults = RunConfig()
    args = {}
    for name in _CONFIG_FIELDS:
        if name not in kv:
            continue
        cur = getattr(defaults, name)
        raw = kv[name]
        if isinstance(cur, tuple):
            args[name] = tuple(float(x) for x in raw.split(","))
        elif isinstance(cur, bool):
            args[name] = raw.lower() in ("1", "true", "yes")
        elif isinstance(cur, int):
            args[name] = int(raw)
        elif isinstance(cur, float):
            args[name] = float(raw)
        else:
            args[name] = raw
    unknown = set(kv) - set(_CONFIG_FIELDS)
    if unknown:
        raise UnwarpError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**args)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    for name in _CONFIG_FIELDS:
        v = getattr(args, f"cfg_{name}", None)
        if v is None:
            continue
        cur = getattr(cfg, name)
        if isinstance(cur, tuple):
            updates[name] = tuple(float(x) for x in v.split(","))
        elif isinstance(cur, int) and not isinstance(cur, bool):
            updates[name] = int(v)
        elif isinstance(cur, float):
            updates[name] = float(v)
        else:
            updates[name] = v
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    for name in _CONFIG_FIELDS:
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", default=None)


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return _apply_overrides(cfg, args)


# --- table helpers -----------------------------------------------------------


def _format_table(header, rows):
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    out = []
    for r in cells:
        out.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(out) + "\n"


def _write_report(out_dir: Path, name: str, header, rows) -> None:
    tsv = "\n".join(["\t".join(header)] + ["\t".join(str(c) for c in r) for r in rows])
    (out_dir / f"{name}.tsv").write_text(tsv + "\n", encoding="utf-8")
    (out_dir / f"{name}.txt").write_text(_format_table(header, rows), encoding="utf-8")


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


# --- commands ----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    try:
        samples = make_suite(
            args.n, args.seed, args.difficulty, out_dir=out,
            height=cfg.work_h, width=cfg.work_w,
        )
    except UnwarpError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return PARTIAL_ERROR
    print(f"generated {len(samples)} samples")
    return 0


def _predictor_factory(args, cfg: RunConfig, suite_samples):
    mode = args.predictors

    def build(image_id, sample):
        pcfg = cfg.pipeline_config()
        if mode == "oracle":
            if sample is None:
                raise UnwarpError(f"{image_id}: oracle predictors need suite ground truth")
            return oracle_predictors(sample, pcfg)
        if mode == "identity":
            return identity_predictors(pcfg)
        if mode == "grids":
            return file_predictors(args.grids, image_id, cfg.grid_h, cfg.grid_w)
        return subprocess_predictors(args.predictor_cmd.split())

    return build


def _trace_text(image_id, trace) -> str:
    lines = [f"image={image_id}"]
    m = getattr(trace.transform, "m", None)
    if m is not None:
        lines.append("transform=" + ",".join(repr(float(v)) for v in np.asarray(m).ravel()))
    lines.append(f"n_maps={len(trace.maps)}")
    if trace.stop is not None:
        lines.append(f"n_opt={trace.stop.n_opt}")
        lines.append("scores=" + ",".join(f"{s:.6f}" for s in trace.stop.scores))
        lines.append(f"fallback={trace.stop.fallback_used}")
    for k, v in trace.timings.items():
        lines.append(f"{k}={v:.4f}")
    return "\n".join(lines) + "\n"


def cmd_rectify(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    jobs = []
    if args.suite:
        for sid, sample in load_suite(args.suite):
            jobs.append((sid, sample.distorted, sample))
    else:
        for path in sorted(args.images or []):
            p = Path(path)
            jobs.append((p.stem, read_image(p), None))
    if not jobs:
        print("no input images", file=sys.stderr)
        return USAGE_ERROR

    build = _predictor_factory(args, cfg, None)
    failures = []

    def run_one(job):
        image_id, img, sample = job
        l_net, c_net, f_net = build(image_id, sample)
        trace = rectify(img, l_net, c_net, f_net, cfg.pipeline_config())
        write_image(out / f"{image_id}.rectified.png", trace.final)
        write_map(out / f"{image_id}.final.dmap", trace.final_map)
        (out / f"{image_id}.trace.txt").write_text(
            _trace_text(image_id, trace), encoding="utf-8"
        )
        return image_id

    with ThreadPoolExecutor(max_workers=cfg.effective_workers()) as pool:
        futures = {pool.submit(run_one, j): j[0] for j in jobs}
        for fut, image_id in futures.items():
            try:
                fut.result()
            except Exception as exc:  # noqa: BLE001 - batch must continue
                failures.append((image_id, str(exc)))

    if failures:
        (out / "failures.txt").write_text(
            "\n".join(f"{i}\t{e}" for i, e in failures) + "\n", encoding="utf-8"
        )
        print(f"{len(failures)} of {len(jobs)} images failed", file=sys.stderr)
        return PARTIAL_ERROR
    print(f"rectified {len(jobs)} images")
    return 0


def _pairs_for_evaluate(args):
    pairs = []
    if args.suite:
        suite = load_suite(args.suite)
        rect_dir = Path(args.rectified)
        for sid, sample in suite:
            pairs.append(
                {
                    "id": sid,
                    "rectified": rect_dir / f"{sid}.rectified.png",
                    "map": rect_dir / f"{sid}.final.dmap",
                    "sample": sample,
                }
            )
    else:
        rect_dir = Path(args.rectified)
        gt_dir = Path(args.gt)
        rect = sorted(rect_dir.glob("*.png"))
        for r in rect:
            g = gt_dir / r.name
            if not g.is_file():
                print(f"no GT pair for {r.name}", file=sys.stderr)
                return None
            pairs.append({"id": r.stem, "rectified": r, "gt": g, "sample": None})
    return pairs


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _pairs_for_evaluate(args)
    if pairs is None or not pairs:
        print("no evaluation pairs", file=sys.stderr)
        return USAGE_ERROR

    ocr = None
    if args.ocr == "mock":
        ocr = GlyphOcr()
    elif args.ocr:
        ocr = subprocess_ocr(args.ocr.split())

    header = [
        "image", "MSSIM", "MSSIM-M", "LD", "LD-M", "AD", "AD-M", "AAD", "AAD-M",
        "ED", "CER", "AED", "ACER",
    ]
    rows = []
    metrics_acc: dict = {}
    failures = []

    from .formats import read_map as _read_map

    for pair in pairs:
        image_id = pair["id"]
        try:
            rectified = read_image(pair["rectified"])
            if pair.get("sample") is not None:
                sample = pair["sample"]
                gt = sample.flat
                layout = sample.layout
            else:
                gt = read_image(pair["gt"])
                layout = None
                if args.layouts:
                    lp = Path(args.layouts) / f"{image_id}.txt"
                    if not lp.is_file():
                        print(f"missing layout file {lp}", file=sys.stderr)
                        return USAGE_ERROR
                    layout = BlockLayout.from_pairs(read_layout(lp))
            mask = None
            if args.masks:
                mp = Path(args.masks) / f"{image_id}.png"
                if mp.is_file():
                    mask = read_mask(mp)

            flow = None
            if args.flow == "builtin":
                flow = estimate_flow(rectified, gt)
            elif args.flow == "true" and pair.get("sample") is not None:
                fmap = _read_map(pair["map"])
                flow = DenseFlow(true_flow(pair["sample"].spec, fmap, gt.height, gt.width))
            elif args.flow == "files":
                fp = Path(args.flow_dir) / f"{image_id}.dflo"
                flow = DenseFlow(read_flow(fp))

            row: dict = {"image": image_id}
            row["MSSIM"] = mssim(rectified, gt)
            row["MSSIM-M"] = mssim(rectified, gt, mask) if mask is not None else None
            if flow is not None:
                row["LD"] = local_distortion(flow)
                row["LD-M"] = local_distortion(flow, mask) if mask is not None else None
                row["AD"] = aligned_distortion(flow, gt)
                row["AD-M"] = aligned_distortion(flow, gt, mask) if mask is not None else None
                gt_lines = filter_aligned(detect_lines(gt), cfg.theta_thresh_deg)
                if len(gt_lines):
                    row["AAD"] = axis_aligned_distortion(rectified, flow, gt_lines)
                    row["AAD-M"] = (
                        axis_aligned_distortion(rectified, flow, gt_lines, mask)
                        if mask is not None
                        else None
                    )
            if ocr is not None and layout is not None and len(layout):
                page_text = ocr.recognize(rectified)
                ref = "\n".join(layout.texts)
                ed, cer = ocr_scores(page_text, ref)
                row["ED"], row["CER"] = ed, cer
                res = layout_aligned_ocr(
                    rectified, layout,
                    aligner=flow if flow is not None else "identity", ocr=ocr,
                )
                row["AED"], row["ACER"] = res.aed, res.acer
            rows.append([_fmt(row.get(h)) if h != "image" else image_id for h in header])
            for k, v in row.items():
                if k != "image" and v is not None:
                    metrics_acc.setdefault(k, []).append(float(v))
        except Exception as exc:  # noqa: BLE001 - batch must continue
            failures.append((image_id, str(exc)))

    agg_rows = []
    for k in header[1:]:
        vals = metrics_acc.get(k)
        if vals:
            agg_rows.append(
                [k, f"{np.mean(vals):.4f}", f"{np.std(vals):.4f}", str(len(vals))]
            )
    _write_report(out, "per_image", header, rows)
    _write_report(out, "aggregate", ["metric", "mean", "std", "n"], agg_rows)
    sys.stdout.write(_format_table(["metric", "mean", "std", "n"], agg_rows))

    if failures:
        (out / "failures.txt").write_text(
            "\n".join(f"{i}\t{e}" for i, e in failures) + "\n", encoding="utf-8"
        )
        print(f"{len(failures)} of {len(pairs)} pairs failed", file=sys.stderr)
        return PARTIAL_ERROR
    return 0


def cmd_stop_analysis(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suite = load_suite(args.suite)
    if not suite:
        print("empty suite", file=sys.stderr)
        return USAGE_ERROR
    max_k = cfg.max_iterations

    policies = [f"fixed:{k}" for k in range(max_k + 1)] + ["adaptive"]
    stats = {p: {"ad": [], "entropy": [], "n_opt": []} for p in policies}

    for sid, sample in suite:
        base = dataclasses.replace(cfg, iteration_policy="adaptive").pipeline_config()
        tr_a = rectify(sample.distorted, *oracle_predictors(sample, base), base)
        cfg5 = dataclasses.replace(base, policy="fixed", fixed_iterations=max_k)
        tr_f = rectify(sample.distorted, *oracle_predictors(sample, cfg5), cfg5)

        def ad_of(m):
            flow = DenseFlow(true_flow(sample.spec, m, sample.flat.height, sample.flat.width))
            return aligned_distortion(flow, sample.flat)

        def entropy_of(img):
            segs = filter_aligned(detect_lines(img), cfg.theta_thresh_deg)
            return line_entropy(segs) if len(segs) else float("nan")

        for k in range(max_k + 1):
            stats[f"fixed:{k}"]["ad"].append(ad_of(tr_f.maps[k]))
            stats[f"fixed:{k}"]["n_opt"].append(k)
        stats["adaptive"]["ad"].append(ad_of(tr_a.final_map))
        stats["adaptive"]["n_opt"].append(tr_a.stop.n_opt if tr_a.stop else 0)
        stats["adaptive"]["entropy"].append(entropy_of(tr_a.final))

    header = ["policy", "mean_AD", "mean_n", "mean_entropy_deg"]
    rows = []
    for p in policies:
        st = stats[p]
        ent = f"{np.nanmean(st['entropy']):.4f}" if st["entropy"] else "-"
        rows.append([p, f"{np.mean(st['ad']):.6f}", f"{np.mean(st['n_opt']):.2f}", ent])
    _write_report(out, "stop_analysis", header, rows)
    sys.stdout.write(_format_table(header, rows))
    return 0


def cmd_dump_config(args) -> int:
    cfg = _resolve_config(args)
    text = dump_config(cfg)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="unwarp",
        description="Cascaded backward-mapping document rectification toolkit",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic suite")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--difficulty", required=True,
                   choices=["affine-only", "+smooth", "+fine", "+crop", "+background"])
    g.add_argument("--out", required=True)
    _add_config_flags(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("rectify", help="rectify images")
    r.add_argument("--images", nargs="*", help="input PNG files")
    r.add_argument("--suite", help="rectify a generated suite's distorted images")
    r.add_argument("--out", required=True)
    r.add_argument("--predictors", choices=["oracle", "identity", "grids", "cmd"],
                   default="identity")
    r.add_argument("--grids", help="directory of stored DMAP1 grids")
    r.add_argument("--predictor-cmd", help="external predictor command")
    r.add_argument("--seed", type=int, default=0)
    _add_config_flags(r)
    r.set_defaults(func=cmd_rectify)

    e = sub.add_parser("evaluate", help="evaluate rectified images against GT")
    e.add_argument("--rectified", required=True)
    e.add_argument("--gt", help="directory of GT images (paired by filename)")
    e.add_argument("--suite", help="use a generated suite as GT")
    e.add_argument("--masks", help="directory of foreground masks (<id>.png)")
    e.add_argument("--layouts", help="directory of layout files (<id>.txt)")
    e.add_argument("--ocr", help="'mock' or an external OCR command")
    e.add_argument("--flow", choices=["none", "builtin", "true", "files"], default="none")
    e.add_argument("--flow-dir", help="directory of DFLO1 files for --flow files")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    _add_config_flags(e)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("stop-analysis", help="fixed vs adaptive iteration table")
    s.add_argument("--suite", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    _add_config_flags(s)
    s.set_defaults(func=cmd_stop_analysis)

    d = sub.add_parser("dump-config", help="print the effective configuration")
    d.add_argument("--out")
    _add_config_flags(d)
    d.set_defaults(func=cmd_dump_config)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "predictors", None) == "grids" and not args.grids:
        ap.error("--predictors grids requires --grids DIR")
    if getattr(args, "predictors", None) == "cmd" and not args.predictor_cmd:
        ap.error("--predictors cmd requires --predictor-cmd")
    if getattr(args, "flow", None) == "files" and not getattr(args, "flow_dir", None):
        ap.error("--flow files requires --flow-dir")
    if args.command == "evaluate" and not args.suite and not args.gt:
        ap.error("evaluate needs --suite or --gt")
    if args.command == "evaluate" and args.flow == "true" and not args.suite:
        ap.error("--flow true requires --suite ground truth")
    try:
        return args.func(args)
    except UnwarpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
