"""Three-angle Cobb computation from vertebra landmarks.

Follows the selection rules of the AASCE challenge evaluation code: a
pairwise tilt matrix over all vertebrae, the row-max/argmax pick for the
main curve, and an S-shape test on the midline that decides how the
proximal and lower curves are measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ValidationError
from .geometry import ImageDims, SpineLandmarks, direction_vectors

S_SHAPE_EPS = 1e-4


@dataclass(frozen=True)
class CobbTriple:
    """MT, PT and TL/L angles in degrees.

    ``upper_idx``/``lower_idx`` are the vertebrae selected for MT; they are
    None for angles that were read from a file rather than computed.
    """

    mt: float
    pt: float
    tl: float
    upper_idx: Optional[int] = None
    lower_idx: Optional[int] = None
    s_shaped: Optional[bool] = None

    def __post_init__(self):
        for name in ("mt", "pt", "tl"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"{name} angle is not finite: {v}")

    @property
    def angles(self) -> Tuple[float, float, float]:
        return (self.mt, self.pt, self.tl)

    @property
    def pair_inverted(self) -> Optional[bool]:
        """True when the MT pair was selected bottom-first (upper_idx > lower_idx)."""
        if self.upper_idx is None or self.lower_idx is None:
            return None
        return self.upper_idx > self.lower_idx


def _pair_angle(ax: float, ay: float, bx: float, by: float) -> float:
    # atan2 form of acos(clip(cos, 0, 1)); stays accurate near 0 degrees
    dot = ax * bx + ay * by
    if dot <= 0.0:
        return 90.0
    return math.degrees(math.atan2(abs(ax * by - ay * bx), dot))


def angle_matrix(spine: SpineLandmarks) -> np.ndarray:
    """Pairwise angles in degrees between vertebra direction vectors.

    Anti-parallel and obtuse pairs are capped at 90 degrees. The result is
    exactly symmetric with a zero diagonal.
    """
    vecs = direction_vectors(spine)
    n = len(vecs)
    out = np.zeros((n, n))
    for i in range(n):
        ax, ay = float(vecs[i, 0]), float(vecs[i, 1])
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = _pair_angle(ax, ay, float(vecs[j, 0]), float(vecs[j, 1]))
    return out


def _chord_residuals(midline: np.ndarray) -> np.ndarray:
    m = np.asarray(midline, dtype=float)
    first, last = m[0], m[-1]
    dx, dy = first[0] - last[0], first[1] - last[1]
    body = m[:-2]
    if dx == 0.0 or dy == 0.0:
        chord = last - first
        rel = body - first
        return chord[0] * rel[:, 1] - chord[1] * rel[:, 0]
    return (body[:, 1] - last[1]) / dy - (body[:, 0] - last[0]) / dx


def is_s_shape(midline: np.ndarray, eps: float = S_SHAPE_EPS) -> bool:
    """Return True when the midline points do not all lie on one side of its end chord.

    Args:
        midline: ``(2n, 2)`` edge midpoints ``[top_0, bottom_0, ..., bottom_{n-1}]``.
        eps: Tolerance on the gap between the signed and absolute residual products.
    """
    r = _chord_residuals(midline)
    pair = np.outer(r, r)
    return bool(abs(pair.sum() - np.abs(pair).sum()) > eps)


def cobb_angles(spine: SpineLandmarks, dims: ImageDims, eps: float = S_SHAPE_EPS) -> CobbTriple:
    """Compute MT, PT and TL/L for an ordered spine.

    Only the structural preconditions are enforced (at least two vertebrae,
    non-degenerate direction vectors); duplicated bottom vertebrae produced
    by count enforcement are accepted.
    """
    if len(spine) < 2:
        raise ValidationError(f"need at least 2 vertebrae, got {len(spine)}")
    a = angle_matrix(spine)
    last = len(spine) - 1
    col = a.argmax(axis=1)
    row_max = a.max(axis=1)
    upper = int(row_max.argmax())
    lower = int(col[upper])
    mt = float(a[upper, lower])

    midline = spine.midline()
    s_shaped = is_s_shape(midline, eps)
    if not s_shaped:
        pt = a[0, upper]
        tl = a[last, lower]
    else:
        top_y = spine.top_mids()[:, 1]
        upper_row = a[upper, : upper + 1]
        pt = upper_row.max()
        if top_y[upper] + top_y[lower] < dims.height:
            tl = a[lower, lower:].max()
        else:
            k = int(upper_row.argmax())
            tl = a[k, : k + 1].max()
    return CobbTriple(mt, float(pt), float(tl), upper, lower, s_shaped)
