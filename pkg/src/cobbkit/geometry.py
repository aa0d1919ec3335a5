"""Core 2D types and coordinate transforms for vertebra landmarks.

Coordinates follow the raster convention: origin at the top-left pixel,
x grows rightward, y grows downward. A vertebra is four corners in the
fixed order TL, TR, BL, BR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError

CORNER_NAMES = ("TL", "TR", "BL", "BR")
N_VERTEBRAE = 17
N_LANDMARKS = 4 * N_VERTEBRAE

DEFAULT_PAD_W = 50.0
DEFAULT_PAD_H = 10.0


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class ImageDims:
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValidationError(f"image dims must be positive, got {self.width}x{self.height}")

    @property
    def aspect(self) -> float:
        """Aspect ratio as width / height."""
        return self.width / self.height


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box coordinates {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"degenerate box {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def x_center(self) -> float:
        return (self.x_min + self.x_max) / 2.0

    @property
    def y_center(self) -> float:
        return (self.y_min + self.y_max) / 2.0

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def shifted(self, dx: float = 0.0, dy: float = 0.0) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class VertebraQuad:
    """Four corner landmarks of one vertebra, ordered TL, TR, BL, BR."""

    tl: Point2
    tr: Point2
    bl: Point2
    br: Point2

    @classmethod
    def from_array(cls, arr) -> "VertebraQuad":
        a = np.asarray(arr, dtype=float).reshape(4, 2)
        return cls(*(Point2(float(x), float(y)) for x, y in a))

    @property
    def corners(self) -> Tuple[Point2, Point2, Point2, Point2]:
        return (self.tl, self.tr, self.bl, self.br)

    def as_array(self) -> np.ndarray:
        return np.array(self.corners, dtype=float)

    def problems(self) -> List[str]:
        """Return the list of violated quad invariants (empty when valid)."""
        out = []
        if not all(math.isfinite(v) for p in self.corners for v in p):
            out.append("non-finite corner coordinate")
            return out
        if not self.tl.x < self.tr.x:
            out.append(f"TL.x {self.tl.x:g} not left of TR.x {self.tr.x:g}")
        if not self.bl.x < self.br.x:
            out.append(f"BL.x {self.bl.x:g} not left of BR.x {self.br.x:g}")
        if not (self.tl.y + self.tr.y) / 2 < (self.bl.y + self.br.y) / 2:
            out.append("top edge not above bottom edge")
        return out

    def validate(self) -> "VertebraQuad":
        issues = self.problems()
        if issues:
            raise ValidationError("invalid vertebra quad: " + "; ".join(issues))
        return self


@dataclass(frozen=True, eq=False)
class SpineLandmarks:
    """Ordered vertebra quads of one image, index 0 topmost.

    ``points`` is a read-only ``(n, 4, 2)`` float array. Construction only
    checks the shape; call :meth:`validate` for the full invariants.
    """

    points: np.ndarray

    def __post_init__(self):
        arr = np.array(self.points, dtype=float)
        if arr.ndim == 2 and arr.shape[1] == 2 and arr.shape[0] % 4 == 0:
            arr = arr.reshape(-1, 4, 2)
        if arr.ndim != 3 or arr.shape[1:] != (4, 2) or arr.shape[0] == 0:
            raise ValidationError(f"landmarks must have shape (n, 4, 2), got {np.shape(self.points)}")
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @classmethod
    def from_quads(cls, quads: Iterable[VertebraQuad]) -> "SpineLandmarks":
        return cls(np.array([q.as_array() for q in quads]))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, SpineLandmarks) and np.array_equal(self.points, other.points)

    @property
    def vertebrae(self) -> Tuple[VertebraQuad, ...]:
        return tuple(VertebraQuad.from_array(q) for q in self.points)

    def flat(self) -> np.ndarray:
        """Landmarks as a ``(4n, 2)`` array in TL, TR, BL, BR order per vertebra."""
        return self.points.reshape(-1, 2).copy()

    def top_mids(self) -> np.ndarray:
        return (self.points[:, 0] + self.points[:, 1]) / 2.0

    def bottom_mids(self) -> np.ndarray:
        return (self.points[:, 2] + self.points[:, 3]) / 2.0

    def midline(self) -> np.ndarray:
        """Top/bottom edge midpoints interleaved: ``[top_0, bottom_0, top_1, ...]``."""
        mids = np.empty((2 * len(self), 2))
        mids[0::2] = self.top_mids()
        mids[1::2] = self.bottom_mids()
        return mids

    def with_x(self, xs: np.ndarray) -> "SpineLandmarks":
        pts = self.points.copy()
        pts[..., 0] = np.asarray(xs, dtype=float).reshape(pts.shape[:2])
        return SpineLandmarks(pts)

    def shifted(self, dx: float = 0.0, dy: float = 0.0) -> "SpineLandmarks":
        return SpineLandmarks(self.points + np.array([dx, dy]))

    def problems(self, expected: Optional[int] = N_VERTEBRAE) -> List[str]:
        out = []
        if expected is not None and len(self) != expected:
            out.append(f"expected {expected} vertebrae, got {len(self)}")
        for i, quad in enumerate(self.vertebrae):
            out.extend(f"vertebra {i}: {msg}" for msg in quad.problems())
        top_y = self.top_mids()[:, 1]
        for i in np.flatnonzero(np.diff(top_y) <= 0):
            out.append(f"vertebra {i + 1} top edge not below vertebra {i}")
        return out

    def validate(self, expected: Optional[int] = N_VERTEBRAE) -> "SpineLandmarks":
        issues = self.problems(expected)
        if issues:
            raise ValidationError("invalid spine landmarks: " + "; ".join(issues))
        return self


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def quad_to_gt_box(
    quad: VertebraQuad,
    pad_w: float = DEFAULT_PAD_W,
    pad_h: float = DEFAULT_PAD_H,
    dims: Optional[ImageDims] = None,
) -> BoundingBox:
    """Build the padded ground-truth box around a vertebra.

    The tight box of the four corners grows by ``pad_w`` in total width and
    ``pad_h`` in total height, split evenly between opposite sides, then is
    clamped to the image when ``dims`` is given.

    Args:
        quad: Vertebra corners.
        pad_w: Total horizontal padding in pixels.
        pad_h: Total vertical padding in pixels.
        dims: Image size used for clamping, or None to skip clamping.

    Returns:
        The padded box.
    """
    if pad_w < 0 or pad_h < 0:
        raise ValidationError(f"padding must be non-negative, got {pad_w}/{pad_h}")
    arr = quad.as_array()
    if not np.all(np.isfinite(arr)):
        raise ValidationError("non-finite corner coordinate")
    x0, y0 = arr.min(axis=0)
    x1, y1 = arr.max(axis=0)
    if not (x0 < x1 and y0 < y1):
        raise ValidationError(f"degenerate quad, tight box ({x0}, {y0}, {x1}, {y1}) has zero area")
    x0, x1 = x0 - pad_w / 2.0, x1 + pad_w / 2.0
    y0, y1 = y0 - pad_h / 2.0, y1 + pad_h / 2.0
    if dims is not None:
        x0, x1 = _clamp(x0, 0.0, dims.width), _clamp(x1, 0.0, dims.width)
        y0, y1 = _clamp(y0, 0.0, dims.height), _clamp(y1, 0.0, dims.height)
    return BoundingBox(float(x0), float(y0), float(x1), float(y1))


def normalize_landmarks(quad: VertebraQuad, box: BoundingBox) -> np.ndarray:
    """Map corners into box-relative ``[0, 1]`` coordinates, shape ``(4, 2)``."""
    arr = quad.as_array()
    for name, (x, y) in zip(CORNER_NAMES, arr):
        if not box.contains(x, y):
            raise ValidationError(f"corner {name} ({x:g}, {y:g}) outside box {box.as_tuple()}")
    out = np.empty_like(arr)
    out[:, 0] = (arr[:, 0] - box.x_min) / box.width
    out[:, 1] = (arr[:, 1] - box.y_min) / box.height
    return out


def denormalize_landmarks(norm_points, box: BoundingBox, crop_offset: float = 0.0) -> VertebraQuad:
    """Inverse of :func:`normalize_landmarks`, then shift y by ``crop_offset``.

    ``crop_offset`` is the number of rows removed from the top of the image
    before detection, so boxes live in cropped coordinates.
    """
    uv = np.asarray(norm_points, dtype=float).reshape(4, 2)
    if not np.all((uv >= 0.0) & (uv <= 1.0)):
        raise ValidationError(f"normalized landmarks outside [0, 1]: {uv.tolist()}")
    x = box.x_min + uv[:, 0] * box.width
    y = box.y_min + uv[:, 1] * box.height + crop_offset
    return VertebraQuad.from_array(np.column_stack([x, y]))


def vertebra_midpoints(quad: VertebraQuad) -> Tuple[Point2, Point2, Point2, Point2]:
    """Edge midpoints ``(top, bottom, left, right)``."""
    tl, tr, bl, br = quad.corners

    def mid(a: Point2, b: Point2) -> Point2:
        return Point2((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)

    return mid(tl, tr), mid(bl, br), mid(tl, bl), mid(tr, br)


def direction_vector(quad: VertebraQuad) -> np.ndarray:
    """Vector from the left-edge midpoint to the right-edge midpoint."""
    _, _, left, right = vertebra_midpoints(quad)
    vec = np.array([right.x - left.x, right.y - left.y])
    if not np.all(np.isfinite(vec)) or not np.any(vec):
        raise ValidationError(f"degenerate vertebra, direction vector {vec.tolist()}")
    return vec


def direction_vectors(spine: SpineLandmarks) -> np.ndarray:
    """Direction vectors of every vertebra, shape ``(n, 2)``."""
    p = spine.points
    left = (p[:, 0] + p[:, 2]) / 2.0
    right = (p[:, 1] + p[:, 3]) / 2.0
    vecs = right - left
    bad = np.flatnonzero(~np.all(np.isfinite(vecs), axis=1) | ~np.any(vecs, axis=1))
    if bad.size:
        raise ValidationError(f"degenerate vertebrae (zero direction vector) at indices {bad.tolist()}")
    return vecs


def mirror_quad(quad: VertebraQuad, axis_x: float = 0.0) -> VertebraQuad:
    """Reflect a quad about the vertical line ``x = axis_x``, keeping TL/TR/BL/BR roles."""
    tl, tr, bl, br = (Point2(2 * axis_x - p.x, p.y) for p in quad.corners)
    return VertebraQuad(tr, tl, br, bl)


def rotate_points(points: np.ndarray, angle_deg: float, center: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
    c, s = math.cos(math.radians(angle_deg)), math.sin(math.radians(angle_deg))
    rot = np.array([[c, -s], [s, c]])
    ctr = np.asarray(center, dtype=float)
    return (np.asarray(points, dtype=float) - ctr) @ rot.T + ctr
