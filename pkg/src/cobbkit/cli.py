"""Batch command line front end.

Subcommands: ``boxes``, ``angles``, ``evaluate``, ``render``, ``synth``.
Settings come from defaults, then ``--config`` (JSON), then the
``COBBKIT_OUTPUT_DIR`` environment variable (output directory only), then
flags. The effective configuration is saved next to the outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .cobb import CobbTriple
from .errors import CobbKitError, ConfigError, ValidationError
from .geometry import quad_to_gt_box
from .io import (
    DatasetRecord,
    PredictionRecord,
    atomic_write_text,
    read_angles_csv,
    read_dims_csv,
    read_ids,
    read_landmark_csv,
    read_predictions,
    write_angles_csv,
    write_boxes_csv,
    write_landmark_csv,
    write_predictions,
    write_report_csv,
    write_report_json,
)
from .metrics import ANGLE_NAMES, smape
from .pipeline import ImageResult, PipelineConfig, process_landmarks, process_prediction, stage_results
from .postprocess import smooth_landmarks
from .render import render_svg
from .synth import PerturbParams, generate_spine, perturb_to_detections, random_params

log = logging.getLogger("cobbkit")

OUTPUT_ENV = "COBBKIT_OUTPUT_DIR"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_FLAG_FIELDS = (
    "pad_w", "pad_h", "ct0", "cb0", "ref_aspect", "poly_degree", "smooth", "smooth_mode",
    "outlier_width_rule", "reject_outliers", "layout", "corner_order", "angle_order",
    "output_dir", "workers",
)


def build_config(args: argparse.Namespace, environ: Optional[Dict[str, str]] = None) -> PipelineConfig:
    environ = os.environ if environ is None else environ
    cfg = PipelineConfig()
    known = {f.name for f in fields(PipelineConfig)}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for k, v in data.items():
            setattr(cfg, k, v)
    if environ.get(OUTPUT_ENV):
        cfg.output_dir = environ[OUTPUT_ENV]
    for name in _FLAG_FIELDS:
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    return cfg.validate()


def _save_config(cfg: PipelineConfig, command: str) -> Path:
    out = Path(cfg.output_dir)
    doc = {"command": command, "version": __version__, "config": cfg.to_dict()}
    atomic_write_text(out / f"config.{command}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return out


def _run_many(fn: Callable, items: Sequence, workers: int) -> List[Tuple[Optional[object], Optional[Exception]]]:
    """Apply ``fn`` to every item, keeping input order; errors are returned, not raised."""
    if workers <= 1 or len(items) <= 1:
        return [_guarded(fn, it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(partial(_guarded, fn), items))


def _guarded(fn: Callable, item):
    try:
        return fn(item), None
    except CobbKitError as exc:
        return None, exc


def _report_failures(failures: List[Tuple[str, Exception]]) -> int:
    for image_id, exc in failures:
        print(f"error: {image_id}: {exc}", file=sys.stderr)
    if not failures:
        return 0
    return max(exc.exit_code for _, exc in failures)


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------

def _load_dataset(args: argparse.Namespace, cfg: PipelineConfig) -> List[DatasetRecord]:
    ids = read_ids(args.ids) if getattr(args, "ids", None) else None
    dims = read_dims_csv(args.dims) if getattr(args, "dims", None) else None
    return read_landmark_csv(args.landmarks, cfg.layout, cfg.corner_order, ids=ids, dims=dims)


def _require_one_input(args: argparse.Namespace) -> None:
    if bool(args.predictions) == bool(args.landmarks):
        raise ConfigError("give exactly one of --predictions or --landmarks")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_boxes(args: argparse.Namespace) -> int:
    """Padded ground-truth boxes for every vertebra of every record."""
    cfg = build_config(args)
    records = _load_dataset(args, cfg)
    if not records:
        raise ValidationError(f"{args.landmarks}: dataset is empty")
    out = _save_config(cfg, "boxes")
    boxes = {}
    failures = []
    for rec in records:
        try:
            boxes[rec.image_id] = [quad_to_gt_box(q, cfg.pad_w, cfg.pad_h, rec.dims) for q in rec.landmarks.vertebrae]
        except ValidationError as exc:
            failures.append((rec.image_id, exc))
    write_boxes_csv(boxes, out / "boxes.csv")
    print(f"wrote {sum(map(len, boxes.values()))} boxes for {len(boxes)} images to {out / 'boxes.csv'}")
    return _report_failures(failures)


def _angles_for_prediction(cfg: PipelineConfig, dump: bool, rec: PredictionRecord):
    if dump:
        stages = stage_results(rec, cfg)
        return process_prediction(rec, cfg), stages
    return process_prediction(rec, cfg), None


def _angles_for_landmarks(cfg: PipelineConfig, dump: bool, rec: DatasetRecord):
    res = process_landmarks(rec, cfg)
    stages = None
    if dump:
        stages = {"raw": process_landmarks(rec, cfg, smooth=False), "smooth": process_landmarks(rec, cfg, smooth=True)}
    return res, stages


def cmd_angles(args: argparse.Namespace) -> int:
    """Cobb angles from detector predictions or annotated landmarks."""
    _require_one_input(args)
    cfg = build_config(args)
    if args.predictions:
        records = read_predictions(args.predictions)
        fn = partial(_angles_for_prediction, cfg, args.dump_stages)
    else:
        records = _load_dataset(args, cfg)
        fn = partial(_angles_for_landmarks, cfg, args.dump_stages)
    if not records:
        raise ValidationError("no input records")
    out = _save_config(cfg, "angles")

    results = _run_many(fn, records, cfg.workers)
    angles: Dict[str, CobbTriple] = {}
    stage_angles: Dict[str, Dict[str, CobbTriple]] = {}
    failures = []
    for rec, (res, err) in zip(records, results):
        if err is not None:
            failures.append((rec.image_id, err))
            continue
        final, stages = res
        angles[rec.image_id] = final.angles
        if stages is not None:
            for name, st in stages.items():
                stage_angles.setdefault(name, {})[rec.image_id] = st.angles
            doc = {name: st.to_dict() for name, st in stages.items()}
            atomic_write_text(out / "stages" / f"{rec.image_id}.json", json.dumps(doc, indent=1) + "\n")

    write_angles_csv(angles, out / "angles.csv")
    print(f"wrote angles for {len(angles)} images to {out / 'angles.csv'}")

    if stage_angles:
        gt = read_angles_csv(args.gt, cfg.angle_order) if args.gt else None
        rows = ["stage,image_id,mt,pt,tl"]
        for name, amap in stage_angles.items():
            for image_id, t in amap.items():
                rows.append(f"{name},{image_id},{t.mt!r},{t.pt!r},{t.tl!r}")
        atomic_write_text(out / "ablation.csv", "\n".join(rows) + "\n")
        if gt is not None:
            lines = ["stage,smape,n_images"]
            for name, amap in stage_angles.items():
                ids = [i for i in amap if i in gt]
                if not ids:
                    continue
                rep = smape([gt[i] for i in ids], [amap[i] for i in ids], ids)
                lines.append(f"{name},{rep.smape!r},{rep.n_images}")
                print(f"{name:>8}: SMAPE {rep.smape:.4f}% over {rep.n_images} images")
            atomic_write_text(out / "ablation_smape.csv", "\n".join(lines) + "\n")
    return _report_failures(failures)


def cmd_evaluate(args: argparse.Namespace) -> int:
    """SMAPE report of predicted against ground-truth angles."""
    cfg = build_config(args)
    gt = read_angles_csv(args.gt, cfg.angle_order)
    pred = read_angles_csv(args.pred, args.pred_order)
    if len(gt) != len(pred) or set(gt) != set(pred):
        missing = sorted(set(gt) ^ set(pred))
        raise ValidationError(
            f"prediction/ground-truth mismatch: {len(pred)} vs {len(gt)} images; unpaired ids {missing[:10]}"
        )
    ids = list(gt)
    report = smape([gt[i] for i in ids], [pred[i] for i in ids], ids, variant=args.variant)
    out = _save_config(cfg, "evaluate")
    write_report_json(report, out / "report.json")
    write_report_csv(report, out / "report.csv")
    mae = ", ".join(f"{n.upper()} {v:.3f}" for n, v in zip(ANGLE_NAMES, report.mae_per_angle))
    print(f"SMAPE ({report.variant}): {report.smape:.6f}% over {report.n_images} images; MAE {mae}")
    if report.excluded:
        print(f"excluded (zero denominator): {report.excluded}", file=sys.stderr)
    return 0


def _render_prediction(cfg: PipelineConfig, rec: PredictionRecord) -> str:
    res: Optional[ImageResult] = None
    warnings = []
    if rec.detections:
        try:
            res = process_prediction(rec, cfg)
        except ValidationError as exc:
            warnings.append(str(exc))
    if res is None:
        return render_svg(rec.dims, [d.box for d in rec.detections], crop_offset=rec.crop_top,
                          warnings=warnings, title=rec.image_id)
    sm = res.smoothed
    if sm is not None and sm.collapsed:
        warnings.append(f"smoothing collapsed vertebrae {list(sm.collapsed)}")
    return render_svg(
        rec.dims,
        [d.box for d in res.kept],
        [d.box for d in res.rejected],
        res.landmarks,
        sm.landmarks if sm else None,
        sm.fits if sm else None,
        res.crop_offset,
        warnings,
        rec.image_id,
    )


def _render_landmarks(cfg: PipelineConfig, rec: DatasetRecord) -> str:
    boxes = [quad_to_gt_box(q, cfg.pad_w, cfg.pad_h, rec.dims) for q in rec.landmarks.vertebrae]
    sm = None
    warnings = list(rec.issues[:3])
    if cfg.smooth:
        sm = smooth_landmarks(rec.landmarks, cfg.poly_degree, cfg.smooth_mode)
    dims = rec.dims
    if dims is None:
        raise ValidationError(f"{rec.image_id}: image dims are required to render")
    return render_svg(
        dims, boxes, (), rec.landmarks, sm.landmarks if sm else None, sm.fits if sm else None,
        warnings=warnings, title=rec.image_id,
    )


def cmd_render(args: argparse.Namespace) -> int:
    """SVG overlay per image."""
    _require_one_input(args)
    cfg = build_config(args)
    if args.predictions:
        records = read_predictions(args.predictions)
        fn = partial(_render_prediction, cfg)
    else:
        records = _load_dataset(args, cfg)
        fn = partial(_render_landmarks, cfg)
    if args.image_id:
        wanted = set(args.image_id)
        records = [r for r in records if r.image_id in wanted]
        missing = wanted - {r.image_id for r in records}
        if missing:
            raise ValidationError(f"image ids not found: {sorted(missing)}")
    out = _save_config(cfg, "render")
    failures = []
    for rec, (svg, err) in zip(records, _run_many(fn, records, cfg.workers)):
        if err is not None:
            failures.append((rec.image_id, err))
            continue
        atomic_write_text(out / "render" / f"{rec.image_id}.svg", svg)
    print(f"rendered {len(records) - len(failures)} images to {out / 'render'}")
    return _report_failures(failures)


def cmd_synth(args: argparse.Namespace) -> int:
    """Seeded synthetic dataset: landmarks, predictions and oracle angles."""
    cfg = build_config(args)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    rng = np.random.default_rng(args.seed)
    dataset, preds, oracle = [], [], {}
    for k in range(args.n):
        shape = args.shape if args.shape != "mixed" else ("c" if k % 2 == 0 else "s")
        params = random_params(rng, shape, noise_sigma=args.noise)
        sp = generate_spine(params)
        image_id = f"synth_{k:04d}"
        dataset.append(DatasetRecord(image_id, sp.dims, sp.landmarks))
        oracle[image_id] = sp.oracle
        pert = PerturbParams(
            pad_w=cfg.pad_w, pad_h=cfg.pad_h, n_outliers=args.outliers, n_drop=args.drop,
            crop_top=args.crop_top, seed=int(rng.integers(2**31)),
        )
        preds.append(perturb_to_detections(sp.landmarks, sp.dims, pert, image_id))
    out = _save_config(cfg, "synth")
    write_landmark_csv(dataset, out / "landmarks.csv", cfg.layout, cfg.corner_order)
    write_predictions(preds, out / "predictions.json")
    write_angles_csv(oracle, out / "oracle_angles.csv")
    doc = {
        i: {"mt": t.mt, "pt": t.pt, "tl": t.tl, "upper_idx": t.upper_idx, "lower_idx": t.lower_idx,
            "s_shaped": t.s_shaped}
        for i, t in oracle.items()
    }
    atomic_write_text(out / "oracle.json", json.dumps(doc, indent=1) + "\n")
    print(f"wrote {args.n} synthetic spines to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of configuration values (flags win)")
    p.add_argument("-o", "--output-dir", dest="output_dir", help=f"output directory (env {OUTPUT_ENV})")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--pad-w", dest="pad_w", type=float, help="total horizontal box padding, px (50)")
    p.add_argument("--pad-h", dest="pad_h", type=float, help="total vertical box padding, px (10)")


def _landmark_input(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--landmarks", required=required, help="landmark CSV")
    p.add_argument("--layout", choices=("xy", "block"), help="coordinate layout of the landmark CSV")
    p.add_argument("--corner-order", dest="corner_order", help="corner names in file order, e.g. TL,TR,BL,BR")
    p.add_argument("--ids", help="sidecar file of image ids, one per row")
    p.add_argument("--dims", help="sidecar CSV of image_id,width,height")


def _postprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ct0", type=float, help="reference top crop fraction (0.18)")
    p.add_argument("--cb0", type=float, help="reference bottom crop fraction (0.21)")
    p.add_argument("--ref-aspect", dest="ref_aspect", type=float,
                   help="aspect ratio (w/h) of the reference image; enables the crop formula")
    p.add_argument("--poly-degree", dest="poly_degree", type=int, help="smoothing polynomial degree (6)")
    p.add_argument("--smooth", action="store_true", default=None, help="smooth landmarks before angles")
    p.add_argument("--smooth-mode", dest="smooth_mode", choices=("all", "split"), help="one curve or left/right curves")
    p.add_argument("--outlier-width-rule", dest="outlier_width_rule", choices=("own", "neighbor-mean"),
                   help="whose box width sets the rejection threshold (own)")
    p.add_argument("--no-outlier-rejection", dest="reject_outliers", action="store_false", default=None,
                   help="keep every detection")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cobbkit", description="Cobb angle post-processing and evaluation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("boxes", help="padded ground-truth boxes from landmarks")
    _common(p)
    _landmark_input(p, required=True)
    p.set_defaults(func=cmd_boxes)

    p = sub.add_parser("angles", help="Cobb angles from predictions or landmarks")
    _common(p)
    p.add_argument("--predictions", help="predictions JSON")
    _landmark_input(p)
    _postprocess_flags(p)
    p.add_argument("--dump-stages", dest="dump_stages", action="store_true",
                   help="write per-stage intermediates and ablation tables")
    p.add_argument("--gt", help="ground-truth angle CSV for ablation SMAPE")
    p.add_argument("--angle-order", dest="angle_order", choices=("mt-pt-tl", "pt-mt-tl"))
    p.set_defaults(func=cmd_angles)

    p = sub.add_parser("evaluate", help="SMAPE of predicted vs ground-truth angles")
    _common(p)
    p.add_argument("--pred", required=True, help="predicted angle CSV")
    p.add_argument("--gt", required=True, help="ground-truth angle CSV")
    p.add_argument("--angle-order", dest="angle_order", choices=("mt-pt-tl", "pt-mt-tl"),
                   help="column order of unlabeled ground-truth angles")
    p.add_argument("--pred-order", dest="pred_order", choices=("mt-pt-tl", "pt-mt-tl"), default="mt-pt-tl")
    p.add_argument("--variant", choices=("ratio-of-sums", "textbook"), default="ratio-of-sums")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="SVG overlays")
    _common(p)
    p.add_argument("--predictions", help="predictions JSON")
    _landmark_input(p)
    _postprocess_flags(p)
    p.add_argument("--image-id", dest="image_id", action="append", help="render only these images")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("synth", help="synthetic dataset with oracle angles")
    _common(p)
    p.add_argument("--n", type=int, default=10, help="number of spines")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", choices=("c", "s", "mixed"), default="mixed")
    p.add_argument("--noise", type=float, default=0.0, help="landmark noise sigma, px")
    p.add_argument("--outliers", type=int, default=0, help="outlier boxes per image")
    p.add_argument("--drop", type=int, default=0, help="dropped boxes per image")
    p.add_argument("--crop-top", dest="crop_top", type=float, default=0.0, help="rows cropped before detection")
    p.add_argument("--layout", choices=("xy", "block"))
    p.add_argument("--corner-order", dest="corner_order")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CobbKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
