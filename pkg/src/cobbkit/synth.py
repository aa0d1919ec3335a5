"""Synthetic spines with analytically known geometry.

The oracle angles here are computed from the prescribed vertebra tilts by
brute force over all pairs, in plain Python loops, so that :mod:`cobbkit.cobb`
can be checked against something other than itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cobb import S_SHAPE_EPS, CobbTriple
from .errors import ValidationError
from .geometry import (
    N_VERTEBRAE,
    Detection,
    ImageDims,
    SpineLandmarks,
    normalize_landmarks,
    quad_to_gt_box,
)
from .io import PredictionRecord

MIDLINE_KINDS = ("poly", "sine")


@dataclass(frozen=True)
class SpineParams:
    """Shape of a synthetic spine.

    The midline is ``x(y) = x_center + f(t)`` with ``t`` running from 0 at the
    top vertebra center to 1 at the bottom one. ``f`` is a polynomial in ``t``
    (``poly_coeffs``, ascending, in pixels) or
    ``amplitude * sin(2*pi*cycles*t + phase)``.

    Tilts default to the midline tangent (endplates perpendicular to the
    curve); ``tilts`` overrides them and ``tilt_jitter`` adds seeded uniform
    noise in degrees on top.
    """

    midline: str = "poly"
    poly_coeffs: Tuple[float, ...] = (0.0,)
    amplitude: float = 0.0
    cycles: float = 1.0
    phase: float = 0.0
    n_vertebrae: int = N_VERTEBRAE
    vertebra_width: float = 60.0
    vertebra_height: float = 40.0
    x_center: float = 500.0
    y_top: float = 700.0
    y_bottom: float = 2300.0
    image_width: float = 1000.0
    image_height: float = 3000.0
    tilts: Optional[Tuple[float, ...]] = None
    tilt_jitter: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.midline not in MIDLINE_KINDS:
            raise ValidationError(f"unknown midline kind {self.midline!r}")
        if self.vertebra_width <= 0 or self.vertebra_height <= 0:
            raise ValidationError("vertebra width and height must be positive")
        if self.n_vertebrae < 2:
            raise ValidationError("need at least two vertebrae")
        if self.tilts is not None and len(self.tilts) != self.n_vertebrae:
            raise ValidationError(f"expected {self.n_vertebrae} tilts, got {len(self.tilts)}")
        if self.noise_sigma < 0 or self.tilt_jitter < 0:
            raise ValidationError("noise_sigma and tilt_jitter must be non-negative")


@dataclass(frozen=True, eq=False)
class SyntheticSpine:
    landmarks: SpineLandmarks
    dims: ImageDims
    oracle: CobbTriple
    tilts: Tuple[float, ...]
    centers: np.ndarray


def _offset(params: SpineParams, t: float) -> Tuple[float, float]:
    """Midline x offset and its derivative with respect to t."""
    if params.midline == "poly":
        val = sum(c * t**k for k, c in enumerate(params.poly_coeffs))
        der = sum(k * c * t ** (k - 1) for k, c in enumerate(params.poly_coeffs) if k)
        return val, der
    w = 2 * math.pi * params.cycles
    arg = w * t + params.phase
    return params.amplitude * math.sin(arg), params.amplitude * w * math.cos(arg)


def _corners(cx: float, cy: float, tilt_deg: float, w: float, h: float) -> List[Tuple[float, float]]:
    th = math.radians(tilt_deg)
    ux, uy = math.cos(th), math.sin(th)  # endplate direction
    nx, ny = math.sin(th), -math.cos(th)  # toward the top edge
    hw, hh = w / 2.0, h / 2.0
    return [
        (cx - hw * ux + hh * nx, cy - hw * uy + hh * ny),
        (cx + hw * ux + hh * nx, cy + hw * uy + hh * ny),
        (cx - hw * ux - hh * nx, cy - hw * uy - hh * ny),
        (cx + hw * ux - hh * nx, cy + hw * uy - hh * ny),
    ]


def _analytic_midline(centers, tilts, h: float) -> List[Tuple[float, float]]:
    out = []
    for (cx, cy), t in zip(centers, tilts):
        th = math.radians(t)
        nx, ny = math.sin(th), -math.cos(th)
        out.append((cx + h / 2 * nx, cy + h / 2 * ny))
        out.append((cx - h / 2 * nx, cy - h / 2 * ny))
    return out


def oracle_s_shape(midline: Sequence[Tuple[float, float]], eps: float = S_SHAPE_EPS) -> bool:
    """Residual-sign test on the end chord, written as explicit loops."""
    x0, y0 = midline[0]
    xn, yn = midline[-1]
    res = []
    for xk, yk in midline[:-2]:
        if x0 == xn or y0 == yn:
            res.append((xn - x0) * (yk - y0) - (yn - y0) * (xk - x0))
        else:
            res.append((yk - yn) / (y0 - yn) - (xk - xn) / (x0 - xn))
    signed = 0.0
    absolute = 0.0
    for a in res:
        for b in res:
            signed += a * b
            absolute += abs(a * b)
    return abs(signed - absolute) > eps


def oracle_from_tilts(
    tilts: Sequence[float], midline: Sequence[Tuple[float, float]], image_height: float, eps: float = S_SHAPE_EPS
) -> CobbTriple:
    """Cobb angles of a spine given per-vertebra tilts in degrees.

    The angle between vertebrae i and j is ``min(|tilt_i - tilt_j|, 90)``.
    The MT pair is the first pair (row-major) that reaches the maximum, and
    the PT/TL branches are evaluated case by case.
    """
    n = len(tilts)

    def ang(i: int, j: int) -> float:
        return min(abs(tilts[i] - tilts[j]), 90.0)

    best, upper, lower = -1.0, 0, 0
    for i in range(n):
        for j in range(n):
            if ang(i, j) > best:
                best, upper, lower = ang(i, j), i, j

    s_shaped = oracle_s_shape(midline, eps)
    if not s_shaped:
        pt = ang(0, upper)
        tl = ang(n - 1, lower)
    else:
        pt, k = -1.0, 0
        for j in range(upper + 1):
            if ang(upper, j) > pt:
                pt, k = ang(upper, j), j
        upper_top_y = midline[2 * upper][1]
        lower_top_y = midline[2 * lower][1]
        if upper_top_y + lower_top_y < image_height:
            tl = max(ang(lower, j) for j in range(lower, n))
        else:
            tl = max(ang(k, j) for j in range(k + 1))
    return CobbTriple(best, pt, tl, upper, lower, s_shaped)


def brute_force_cobb(spine: SpineLandmarks, dims: ImageDims, eps: float = S_SHAPE_EPS) -> CobbTriple:
    """Cobb angles straight from landmarks, all pairs in plain Python.

    Independent of :func:`cobbkit.cobb.cobb_angles`; uses the same per-pair
    angle formula so that exact float equality of MT can be asserted.
    """
    pts = spine.points.tolist()
    n = len(pts)
    vecs = []
    mids = []
    for tl, tr, bl, br in pts:
        lx, ly = (tl[0] + bl[0]) / 2, (tl[1] + bl[1]) / 2
        rx, ry = (tr[0] + br[0]) / 2, (tr[1] + br[1]) / 2
        vecs.append((rx - lx, ry - ly))
        mids.append(((tl[0] + tr[0]) / 2, (tl[1] + tr[1]) / 2))
        mids.append(((bl[0] + br[0]) / 2, (bl[1] + br[1]) / 2))

    def ang(i: int, j: int) -> float:
        if i == j:
            return 0.0
        (ax, ay), (bx, by) = vecs[i], vecs[j]
        dot = ax * bx + ay * by
        if dot <= 0.0:
            return 90.0
        return math.degrees(math.atan2(abs(ax * by - ay * bx), dot))

    best, upper, lower = -1.0, 0, 0
    for i in range(n):
        for j in range(n):
            if ang(i, j) > best:
                best, upper, lower = ang(i, j), i, j
    s_shaped = oracle_s_shape(mids, eps)
    if not s_shaped:
        return CobbTriple(best, ang(0, upper), ang(n - 1, lower), upper, lower, False)
    pt, k = -1.0, 0
    for j in range(upper + 1):
        if ang(upper, j) > pt:
            pt, k = ang(upper, j), j
    if mids[2 * upper][1] + mids[2 * lower][1] < dims.height:
        tl = max(ang(lower, j) for j in range(lower, n))
    else:
        tl = max(ang(k, j) for j in range(k + 1))
    return CobbTriple(best, pt, tl, upper, lower, True)


def generate_spine(params: SpineParams) -> SyntheticSpine:
    """Build a spine from ``params``.

    Vertebra centers sit on the midline at evenly spaced y; each is a
    ``vertebra_width x vertebra_height`` rectangle rotated by its tilt.
    Pixel noise is added last, after the oracle is computed.
    """
    n = params.n_vertebrae
    span = params.y_bottom - params.y_top
    spacing = span / (n - 1)
    if spacing < params.vertebra_height:
        raise ValidationError(
            f"vertebrae overlap: spacing {spacing:g} px < vertebra height {params.vertebra_height:g} px"
        )
    rng = np.random.default_rng(params.seed)

    centers = []
    tangent_tilts = []
    for i in range(n):
        t = i / (n - 1)
        off, der = _offset(params, t)
        centers.append((params.x_center + off, params.y_top + t * span))
        tangent_tilts.append(-math.degrees(math.atan(der / span)))
    tilts = list(params.tilts) if params.tilts is not None else tangent_tilts
    if params.tilt_jitter:
        tilts = [t + float(j) for t, j in zip(tilts, rng.uniform(-params.tilt_jitter, params.tilt_jitter, n))]

    quads = [_corners(cx, cy, t, params.vertebra_width, params.vertebra_height) for (cx, cy), t in zip(centers, tilts)]
    pts = np.array(quads, dtype=float)
    dims = ImageDims(params.image_width, params.image_height)
    oracle = oracle_from_tilts(tilts, _analytic_midline(centers, tilts, params.vertebra_height), dims.height)
    if params.noise_sigma:
        pts = pts + rng.normal(0.0, params.noise_sigma, pts.shape)
    return SyntheticSpine(SpineLandmarks(pts), dims, oracle, tuple(tilts), np.array(centers))


def random_params(rng: np.random.Generator, shape: str = "c", **overrides) -> SpineParams:
    """Draw a plausible C- or S-curved spine.

    C-curves use a quadratic midline, S-curves a full sine period. Curvature
    is capped so neighbouring centers stay well within half a padded box
    width of each other (real vertebrae must survive outlier rejection).
    Tilt jitter of up to 0.5 degrees keeps distinct vertebrae from tying
    exactly.
    """
    height = float(rng.uniform(2400, 3600))
    top = float(rng.uniform(0.15, 0.3)) * height
    bottom = height - float(rng.uniform(0.15, 0.3)) * height
    base = dict(
        vertebra_width=float(rng.uniform(50, 80)),
        vertebra_height=float(rng.uniform(35, 55)),
        x_center=float(rng.uniform(400, 800)),
        y_top=top,
        y_bottom=bottom,
        image_width=float(rng.uniform(1000, 1400)),
        image_height=height,
        tilt_jitter=0.5,
        seed=int(rng.integers(2**31)),
    )
    if shape == "c":
        sag = float(rng.choice([-1, 1]) * rng.uniform(40, 100))
        vertex = float(rng.uniform(0.3, 0.7))
        # sag * 4 * (t - vertex)^2 shifted so the top center sits at x_center
        c2 = 4 * sag
        base.update(midline="poly", poly_coeffs=(0.0, -2 * c2 * vertex, c2))
    elif shape == "s":
        base.update(
            midline="sine",
            amplitude=float(rng.choice([-1, 1]) * rng.uniform(40, 85)),
            cycles=1.0,
            phase=float(rng.uniform(-0.3, 0.3)),
        )
    else:
        raise ValidationError(f"unknown spine shape {shape!r}; choose 'c' or 's'")
    base.update(overrides)
    return SpineParams(**base)


@dataclass(frozen=True)
class PerturbParams:
    pad_w: float = 50.0
    pad_h: float = 10.0
    n_outliers: int = 0
    outlier_shift: float = 3.0  # in box widths
    n_drop: int = 0
    crop_top: float = 0.0
    seed: int = 0


def perturb_to_detections(
    spine: SpineLandmarks, dims: ImageDims, params: PerturbParams = PerturbParams(), image_id: str = "synth"
) -> PredictionRecord:
    """Turn a spine into detector-style output.

    Every vertebra becomes its padded ground-truth box with box-normalized
    corners. Optionally ``n_drop`` boxes are removed and ``n_outliers`` extra
    boxes are inserted between interior vertebrae, shifted sideways by
    ``outlier_shift`` box widths. Boxes are expressed in an image cropped by
    ``crop_top`` rows.
    """
    rng = np.random.default_rng(params.seed)
    items = []
    for quad in spine.vertebrae:
        box = quad_to_gt_box(quad, params.pad_w, params.pad_h, dims)
        items.append((box, normalize_landmarks(quad, box)))

    if params.n_drop:
        if params.n_drop >= len(items):
            raise ValidationError("cannot drop every box")
        drop = set(rng.choice(len(items), size=params.n_drop, replace=False).tolist())
        items = [it for k, it in enumerate(items) if k not in drop]

    dets: List[Tuple[Detection, np.ndarray]] = [(Detection(b), lm) for b, lm in items]
    if params.n_outliers:
        # slot s sits between items s and s+1; both must keep another real
        # neighbour, and two outliers may not share a vertebra
        slots: List[int] = []
        for s in rng.permutation(np.arange(1, len(items) - 2)).tolist():
            if all(abs(s - o) >= 2 for o in slots):
                slots.append(s)
            if len(slots) == params.n_outliers:
                break
        if len(slots) < params.n_outliers:
            raise ValidationError(f"no room for {params.n_outliers} isolated outliers")
        for s in slots:
            box, lm = items[s]
            nxt = items[s + 1][0]
            dx = params.outlier_shift * box.width * (1 if rng.random() < 0.5 else -1)
            if not 0 <= box.x_center + dx <= dims.width:
                dx = -dx
            dy = (nxt.y_center - box.y_center) / 2.0
            dets.append((Detection(box.shifted(dx, dy), 0.5), lm))

    dets = [(Detection(d.box.shifted(0.0, -params.crop_top), d.score), lm) for d, lm in dets]
    return PredictionRecord(
        image_id, dims, tuple(d for d, _ in dets), tuple(lm for _, lm in dets), params.crop_top
    )
