"""Inference-time cleanup of detector output.

Cropping, neighbour-based outlier rejection, vertebra count enforcement and
polynomial smoothing of landmark x against y.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, TypeVar

import numpy as np

from .errors import ConfigError, ValidationError
from .geometry import N_VERTEBRAE, Detection, ImageDims, SpineLandmarks

log = logging.getLogger(__name__)

DEFAULT_CT0 = 0.18
DEFAULT_CB0 = 0.21
DEFAULT_POLY_DEGREE = 6

WIDTH_RULES = ("own", "neighbor-mean")
SMOOTH_MODES = ("all", "split")

T = TypeVar("T")


@dataclass(frozen=True)
class CropSpec:
    c_t: float
    c_b: float

    def __post_init__(self):
        if self.c_t < 0 or self.c_b < 0:
            raise ConfigError(f"crop fractions must be non-negative, got c_t={self.c_t}, c_b={self.c_b}")
        if self.c_t + self.c_b >= 1:
            raise ConfigError(f"crop fractions remove the whole image: c_t={self.c_t} + c_b={self.c_b} >= 1")


def compute_crop(a: float, a0: float, c_t0: float = DEFAULT_CT0, c_b0: float = DEFAULT_CB0) -> CropSpec:
    """Scale the reference crop fractions by the aspect ratio ``a / a0``.

    Args:
        a: Aspect ratio (width / height) of the image being cropped.
        a0: Aspect ratio of the reference image the fractions were tuned on.
        c_t0: Top fraction for the reference image.
        c_b0: Bottom fraction for the reference image.
    """
    if not (a > 0 and a0 > 0):
        raise ConfigError(f"aspect ratios must be positive, got a={a}, a0={a0}")
    ratio = a / a0
    return CropSpec(float(c_t0 * ratio), float(c_b0 * ratio))


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def apply_crop(dims: ImageDims, crop: CropSpec) -> Tuple[ImageDims, int]:
    """Return the cropped image size and the number of rows removed at the top."""
    top = _round_half_up(crop.c_t * dims.height)
    bottom = _round_half_up(crop.c_b * dims.height)
    new_h = dims.height - top - bottom
    if new_h <= 0:
        raise ConfigError(f"crop leaves no rows: height {dims.height}, top {top}, bottom {bottom}")
    return ImageDims(dims.width, new_h), top


def det_sort_key(det: Detection):
    b = det.box
    return (b.y_center, b.x_center, b.y_min, b.x_min, b.y_max, b.x_max, -det.score)


def sort_detections(dets: Sequence[Detection]) -> List[Detection]:
    """Canonical top-to-bottom order; ties broken by x-center then raw coordinates."""
    return sorted(dets, key=det_sort_key)


def outlier_mask(dets: Sequence[Detection], width_rule: str = "own") -> np.ndarray:
    """Boolean outlier flags for detections already sorted top to bottom.

    A box is flagged when its x-center is more than half a box width away
    from every neighbour it has (two in the interior, one at either end).
    All flags are computed against the original neighbours.
    """
    if width_rule not in WIDTH_RULES:
        raise ConfigError(f"unknown outlier width rule {width_rule!r}; choose from {WIDTH_RULES}")
    n = len(dets)
    xc = np.array([d.box.x_center for d in dets])
    w = np.array([d.box.width for d in dets])
    flags = np.zeros(n, dtype=bool)
    if n < 2:
        return flags
    for k in range(n):
        far = []
        for nb in (k - 1, k + 1):
            if 0 <= nb < n:
                half = w[k] / 2.0 if width_rule == "own" else (w[k] + w[nb]) / 4.0
                far.append(abs(xc[k] - xc[nb]) > half)
        flags[k] = all(far)
    return flags


def reject_outliers(
    dets: Sequence[Detection], width_rule: str = "own"
) -> Tuple[List[Detection], List[Detection]]:
    """Split detections into ``(kept, rejected)``, both sorted top to bottom."""
    if not dets:
        raise ValidationError("no detections to filter")
    ordered = sort_detections(dets)
    flags = outlier_mask(ordered, width_rule)
    kept = [d for d, f in zip(ordered, flags) if not f]
    rejected = [d for d, f in zip(ordered, flags) if f]
    return kept, rejected


def enforce_count(items: Sequence[T], target: int = N_VERTEBRAE) -> List[T]:
    """Drop extras from the bottom or repeat the bottom item until ``target`` remain."""
    if not items:
        raise ValidationError("cannot enforce vertebra count on an empty list")
    out = list(items[:target])
    out.extend([out[-1]] * (target - len(out)))
    return out


@dataclass(frozen=True, eq=False)
class PolyFit:
    """Least-squares polynomial x = P((y - y_center) / y_scale)."""

    degree: int
    coefficients: np.ndarray  # ascending powers
    y_center: float
    y_scale: float
    residual: float = 0.0

    def __post_init__(self):
        if self.y_scale <= 0:
            raise ValidationError(f"y_scale must be positive, got {self.y_scale}")
        if len(self.coefficients) != self.degree + 1:
            raise ValidationError("coefficient count must equal degree + 1")

    def __call__(self, y) -> np.ndarray:
        t = (np.asarray(y, dtype=float) - self.y_center) / self.y_scale
        return np.polynomial.polynomial.polyval(t, self.coefficients)


def fit_polynomial(points, degree: int = DEFAULT_POLY_DEGREE) -> PolyFit:
    """Fit x as a polynomial of y by least squares.

    Args:
        points: Sequence of ``(y, x)`` pairs in pixels.
        degree: Polynomial degree, at least 1.

    Returns:
        The fit, with ``residual`` set to the 2-norm of the fit residuals.
    """
    if degree < 1:
        raise ConfigError(f"polynomial degree must be >= 1, got {degree}")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    y, x = pts[:, 0], pts[:, 1]
    n_distinct = len(np.unique(y))
    if n_distinct < degree + 1:
        raise ValidationError(
            f"rank deficient fit: degree {degree} needs {degree + 1} distinct y values, got {n_distinct}"
        )
    center = float(y.mean())
    scale = float(np.abs(y - center).max()) or 1.0
    t = (y - center) / scale
    vander = np.polynomial.polynomial.polyvander(t, degree)
    coef, _, rank, _ = np.linalg.lstsq(vander, x, rcond=None)
    if rank < degree + 1:
        raise ValidationError(f"rank deficient fit: design matrix rank {rank} < {degree + 1}")
    resid = float(np.linalg.norm(vander @ coef - x))
    return PolyFit(degree, coef, center, scale, resid)


@dataclass(frozen=True, eq=False)
class SmoothingResult:
    landmarks: SpineLandmarks
    fits: Dict[str, PolyFit]
    collapsed: Tuple[int, ...] = field(default=())


def smooth_landmarks(
    spine: SpineLandmarks, degree: int = DEFAULT_POLY_DEGREE, mode: str = "all"
) -> SmoothingResult:
    """Replace every landmark x with a polynomial-in-y fit; y is untouched.

    ``mode="all"`` fits one curve through all landmarks. ``mode="split"`` fits
    the left corners (TL, BL) and right corners (TR, BR) separately, which
    keeps vertebra width. Quads whose left side ends up at or right of their
    right side are listed in ``collapsed``.
    """
    if mode not in SMOOTH_MODES:
        raise ConfigError(f"unknown smoothing mode {mode!r}; choose from {SMOOTH_MODES}")
    pts = spine.points
    new_x = pts[..., 0].copy()
    fits: Dict[str, PolyFit] = {}
    if mode == "all":
        fit = fit_polynomial(np.column_stack([pts[..., 1].ravel(), pts[..., 0].ravel()]), degree)
        new_x = fit(pts[..., 1])
        fits["all"] = fit
    else:
        for name, cols in (("left", [0, 2]), ("right", [1, 3])):
            sub = pts[:, cols]
            fit = fit_polynomial(np.column_stack([sub[..., 1].ravel(), sub[..., 0].ravel()]), degree)
            new_x[:, cols] = fit(sub[..., 1])
            fits[name] = fit
    out = spine.with_x(new_x)
    p = out.points
    collapsed = tuple(int(i) for i in np.flatnonzero((p[:, 0, 0] >= p[:, 1, 0]) | (p[:, 2, 0] >= p[:, 3, 0])))
    if collapsed:
        log.warning("smoothing (%s mode) collapsed %d vertebrae: %s", mode, len(collapsed), list(collapsed))
    return SmoothingResult(out, fits, collapsed)
