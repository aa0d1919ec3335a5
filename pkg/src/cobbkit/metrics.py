"""SMAPE and per-angle error statistics over Cobb angle triples."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cobb import CobbTriple
from .errors import ValidationError

ANGLE_NAMES = ("mt", "pt", "tl")
VARIANTS = ("ratio-of-sums", "textbook")


@dataclass(frozen=True)
class ImageScore:
    image_id: str
    numerator: float
    denominator: float
    ratio: float


@dataclass
class EvalReport:
    smape: float
    per_image: List[ImageScore]
    mae_per_angle: Tuple[float, float, float]
    n_images: int
    excluded: List[str] = field(default_factory=list)
    variant: str = "ratio-of-sums"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mae_per_angle"] = dict(zip(ANGLE_NAMES, self.mae_per_angle))
        return d


def _as_arrays(gt: Sequence[CobbTriple], pred: Sequence[CobbTriple]) -> Tuple[np.ndarray, np.ndarray]:
    if len(gt) != len(pred):
        raise ValidationError(f"length mismatch: {len(gt)} ground-truth vs {len(pred)} predicted triples")
    if not gt:
        raise ValidationError("no images to evaluate")
    g = np.array([t.angles for t in gt], dtype=float)
    p = np.array([t.angles for t in pred], dtype=float)
    if (g < 0).any() or (p < 0).any():
        raise ValidationError("Cobb angles must be non-negative")
    return g, p


def mae_per_angle(gt: Sequence[CobbTriple], pred: Sequence[CobbTriple]) -> Tuple[float, float, float]:
    """Mean absolute error in degrees for MT, PT and TL separately."""
    g, p = _as_arrays(gt, pred)
    mae = np.abs(g - p).mean(axis=0)
    return (float(mae[0]), float(mae[1]), float(mae[2]))


def smape(
    gt: Sequence[CobbTriple],
    pred: Sequence[CobbTriple],
    ids: Optional[Sequence[str]] = None,
    variant: str = "ratio-of-sums",
) -> EvalReport:
    """Symmetric mean absolute percentage error over paired images.

    The default ``ratio-of-sums`` variant scores each image by the ratio of summed
    absolute errors to summed angles over its three angles (no factor of 2),
    then averages the ratios and multiplies by 100. ``textbook`` averages
    ``2|g - p| / (g + p)`` over every angle instead.

    An image whose denominator is zero scores 0 if its numerator is also
    zero; otherwise it is left out of the mean and listed in ``excluded``.
    """
    if variant not in VARIANTS:
        raise ValidationError(f"unknown SMAPE variant {variant!r}; choose from {VARIANTS}")
    g, p = _as_arrays(gt, pred)
    if ids is None:
        ids = [str(i) for i in range(len(g))]
    elif len(ids) != len(g):
        raise ValidationError("ids length does not match the number of images")

    scores: List[ImageScore] = []
    excluded: List[str] = []
    for image_id, gi, pi in zip(ids, g, p):
        num = float(np.abs(gi - pi).sum())
        den = float((gi + pi).sum())
        if variant == "ratio-of-sums":
            if den == 0.0:
                if num != 0.0:
                    excluded.append(image_id)
                    continue
                ratio = 0.0
            else:
                ratio = num / den
        else:
            per = np.zeros(3)
            nz = (gi + pi) != 0
            per[nz] = 2.0 * np.abs(gi - pi)[nz] / (gi + pi)[nz]
            ratio = float(per.mean())
        scores.append(ImageScore(image_id, num, den, ratio))

    value = 100.0 * float(np.mean([s.ratio for s in scores])) if scores else float("nan")
    return EvalReport(value, scores, mae_per_angle(gt, pred), len(scores), excluded, variant)
