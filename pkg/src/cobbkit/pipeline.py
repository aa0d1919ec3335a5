"""Per-image processing chain: crop offset, outlier rejection, count
enforcement, mapping landmarks back to the image, smoothing, Cobb angles."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .cobb import CobbTriple, cobb_angles
from .errors import ConfigError, ValidationError
from .geometry import (
    CORNER_NAMES,
    DEFAULT_PAD_H,
    DEFAULT_PAD_W,
    N_VERTEBRAE,
    Detection,
    ImageDims,
    SpineLandmarks,
    denormalize_landmarks,
)
from .io import ANGLE_ORDERS, LAYOUTS, DatasetRecord, PredictionRecord, corner_permutation
from .postprocess import (
    DEFAULT_CB0,
    DEFAULT_CT0,
    DEFAULT_POLY_DEGREE,
    SMOOTH_MODES,
    WIDTH_RULES,
    SmoothingResult,
    apply_crop,
    compute_crop,
    enforce_count,
    outlier_mask,
    det_sort_key,
    smooth_landmarks,
)

log = logging.getLogger(__name__)

STAGES = ("count", "outlier", "smooth")


@dataclass
class PipelineConfig:
    pad_w: float = DEFAULT_PAD_W
    pad_h: float = DEFAULT_PAD_H
    ct0: float = DEFAULT_CT0
    cb0: float = DEFAULT_CB0
    ref_aspect: Optional[float] = None
    poly_degree: int = DEFAULT_POLY_DEGREE
    smooth: bool = False
    smooth_mode: str = "all"
    outlier_width_rule: str = "own"
    reject_outliers: bool = True
    target_count: int = N_VERTEBRAE
    layout: str = "xy"
    corner_order: str = ",".join(CORNER_NAMES)
    angle_order: str = "mt-pt-tl"
    output_dir: str = "out"
    workers: int = 1

    def validate(self) -> "PipelineConfig":
        problems = []
        if self.pad_w < 0 or self.pad_h < 0:
            problems.append(f"padding must be non-negative (pad_w={self.pad_w}, pad_h={self.pad_h})")
        if self.ct0 < 0 or self.cb0 < 0 or self.ct0 + self.cb0 >= 1:
            problems.append(f"reference crop fractions invalid (ct0={self.ct0}, cb0={self.cb0})")
        if self.ref_aspect is not None and self.ref_aspect <= 0:
            problems.append(f"ref_aspect must be positive, got {self.ref_aspect}")
        if self.poly_degree < 1:
            problems.append(f"poly_degree must be >= 1, got {self.poly_degree}")
        if self.smooth_mode not in SMOOTH_MODES:
            problems.append(f"smooth_mode must be one of {SMOOTH_MODES}, got {self.smooth_mode!r}")
        if self.outlier_width_rule not in WIDTH_RULES:
            problems.append(f"outlier_width_rule must be one of {WIDTH_RULES}, got {self.outlier_width_rule!r}")
        if self.target_count < 2:
            problems.append(f"target_count must be >= 2, got {self.target_count}")
        if self.layout not in LAYOUTS:
            problems.append(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.angle_order not in ANGLE_ORDERS:
            problems.append(f"angle_order must be one of {sorted(ANGLE_ORDERS)}, got {self.angle_order!r}")
        if self.workers < 1:
            problems.append(f"workers must be >= 1, got {self.workers}")
        try:
            corner_permutation(self.corner_order)
        except ValidationError as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError("invalid configuration: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class ImageResult:
    image_id: str
    dims: ImageDims
    crop_offset: float = 0.0
    kept: List[Detection] = field(default_factory=list)
    rejected: List[Detection] = field(default_factory=list)
    landmarks: Optional[SpineLandmarks] = None
    smoothed: Optional[SmoothingResult] = None
    angles: Optional[CobbTriple] = None

    @property
    def final_landmarks(self) -> Optional[SpineLandmarks]:
        return self.smoothed.landmarks if self.smoothed is not None else self.landmarks

    def to_dict(self) -> dict:
        def boxes(dets):
            return [{"box": list(d.box.as_tuple()), "score": d.score} for d in dets]

        out = {
            "image_id": self.image_id,
            "width": self.dims.width,
            "height": self.dims.height,
            "crop_offset": self.crop_offset,
            "kept": boxes(self.kept),
            "rejected": boxes(self.rejected),
            "landmarks": None if self.landmarks is None else self.landmarks.points.tolist(),
        }
        if self.smoothed is not None:
            out["smoothed"] = {
                "landmarks": self.smoothed.landmarks.points.tolist(),
                "collapsed": list(self.smoothed.collapsed),
                "fits": {
                    k: {
                        "degree": f.degree,
                        "coefficients": f.coefficients.tolist(),
                        "y_center": f.y_center,
                        "y_scale": f.y_scale,
                        "residual": f.residual,
                    }
                    for k, f in self.smoothed.fits.items()
                },
            }
        if self.angles is not None:
            a = self.angles
            out["angles"] = {
                "mt": a.mt, "pt": a.pt, "tl": a.tl,
                "upper_idx": a.upper_idx, "lower_idx": a.lower_idx,
                "s_shaped": a.s_shaped, "pair_inverted": a.pair_inverted,
            }
        return out


def crop_offset_for(rec: PredictionRecord, cfg: PipelineConfig) -> float:
    """Rows removed at the top: from the crop formula when a reference aspect is set, else from the record."""
    if cfg.ref_aspect is None:
        return rec.crop_top
    crop = compute_crop(rec.dims.aspect, cfg.ref_aspect, cfg.ct0, cfg.cb0)
    _, top = apply_crop(rec.dims, crop)
    if rec.crop_top and rec.crop_top != top:
        log.warning("%s: record crop_top %g overridden by crop formula (%d)", rec.image_id, rec.crop_top, top)
    return float(top)


def process_prediction(
    rec: PredictionRecord, cfg: PipelineConfig, *, reject: Optional[bool] = None, smooth: Optional[bool] = None
) -> ImageResult:
    """Run the full chain on one image of detector output."""
    reject = cfg.reject_outliers if reject is None else reject
    smooth = cfg.smooth if smooth is None else smooth
    offset = crop_offset_for(rec, cfg)
    result = ImageResult(rec.image_id, rec.dims, offset)
    if not rec.detections:
        raise ValidationError(f"{rec.image_id}: no detections")

    dets = rec.detections
    idx = sorted(range(len(dets)), key=lambda k: det_sort_key(dets[k]))
    ordered = [dets[k] for k in idx]
    flags = outlier_mask(ordered, cfg.outlier_width_rule) if reject else np.zeros(len(ordered), bool)
    kept_idx = [k for k, f in zip(idx, flags) if not f]
    result.kept = [dets[k] for k in kept_idx]
    result.rejected = [d for d, f in zip(ordered, flags) if f]
    if not kept_idx:
        raise ValidationError(f"{rec.image_id}: every detection was rejected as an outlier")

    chosen = enforce_count(kept_idx, cfg.target_count)
    quads = [denormalize_landmarks(rec.landmarks[k], dets[k].box, offset) for k in chosen]
    result.landmarks = SpineLandmarks.from_quads(quads)
    final = result.landmarks
    if smooth:
        result.smoothed = smooth_landmarks(final, cfg.poly_degree, cfg.smooth_mode)
        final = result.smoothed.landmarks
    result.angles = cobb_angles(final, rec.dims)
    return result


def process_landmarks(rec: DatasetRecord, cfg: PipelineConfig, *, smooth: Optional[bool] = None) -> ImageResult:
    """Angles straight from annotated landmarks (no detection stages)."""
    smooth = cfg.smooth if smooth is None else smooth
    if rec.landmarks is None:
        raise ValidationError(f"{rec.image_id}: record has no landmarks")
    if rec.dims is None:
        raise ValidationError(f"{rec.image_id}: image dims are required to compute angles")
    result = ImageResult(rec.image_id, rec.dims, landmarks=rec.landmarks)
    final = rec.landmarks
    if smooth:
        result.smoothed = smooth_landmarks(final, cfg.poly_degree, cfg.smooth_mode)
        final = result.smoothed.landmarks
    result.angles = cobb_angles(final, rec.dims)
    return result


def stage_results(rec: PredictionRecord, cfg: PipelineConfig) -> Dict[str, ImageResult]:
    """Ablation ladder: count only, then + outlier rejection, then + smoothing."""
    return {
        "count": process_prediction(rec, cfg, reject=False, smooth=False),
        "outlier": process_prediction(rec, cfg, reject=True, smooth=False),
        "smooth": process_prediction(rec, cfg, reject=True, smooth=True),
    }
