"""Readers and writers for landmark datasets, angle tables, detector
predictions and evaluation reports.

Formats
-------
Landmark CSV
    One row per image. Columns ``image_id, width, height`` followed by 136
    coordinates, either interleaved (``x0, y0, x1, y1, ...``, layout ``xy``)
    or as all x then all y (``x0..x67, y0..y67``, layout ``block``). A header
    row is optional. Rows with only 136 values (no id, no dims) are accepted
    with a sidecar id list; rows with 137 values carry an id but no dims.
    Coordinates that all lie in ``[0, 1]`` are treated as normalized to the
    image size and scaled by the row dims.

Angle CSV
    ``image_id, mt, pt, tl`` (extra columns ignored when a header names the
    angle columns). Without a header the column order is given explicitly.

Predictions JSON
    ``{"format": "cobbkit-predictions", "version": 1, "records": [...]}``;
    each record holds ``image_id``, original ``width``/``height``,
    ``crop_top`` (rows removed before detection; boxes are in cropped
    coordinates) and ``detections``, a list of
    ``{"box": [x_min, y_min, x_max, y_max], "score": s, "landmarks": [[u, v] x 4]}``
    with landmarks normalized to the box and ordered TL, TR, BL, BR.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
from io import StringIO
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .cobb import CobbTriple
from .errors import ParseError, ValidationError
from .geometry import (
    CORNER_NAMES,
    N_LANDMARKS,
    BoundingBox,
    Detection,
    ImageDims,
    SpineLandmarks,
)
from .metrics import EvalReport

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

LAYOUTS = ("xy", "block")
ANGLE_ORDERS = {"mt-pt-tl": ("mt", "pt", "tl"), "pt-mt-tl": ("pt", "mt", "tl")}
PREDICTIONS_FORMAT = "cobbkit-predictions"
PREDICTIONS_VERSION = 1
N_COORDS = 2 * N_LANDMARKS


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    image_id: str
    dims: Optional[ImageDims] = None
    landmarks: Optional[SpineLandmarks] = None
    gt_angles: Optional[CobbTriple] = None
    issues: Tuple[str, ...] = ()
    normalized_source: bool = False

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be nonempty")
        if self.landmarks is None and self.gt_angles is None:
            raise ValidationError(f"record {self.image_id!r} has neither landmarks nor angles")


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    """Detector output for one image: boxes plus box-normalized corner landmarks."""

    image_id: str
    dims: ImageDims
    detections: Tuple[Detection, ...] = ()
    landmarks: Tuple[np.ndarray, ...] = ()
    crop_top: float = 0.0

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be nonempty")
        dets = tuple(self.detections)
        lms = []
        for lm in self.landmarks:
            arr = np.array(lm, dtype=float).reshape(4, 2)
            if not np.all((arr >= 0.0) & (arr <= 1.0)):
                raise ValidationError(f"{self.image_id}: normalized landmarks outside [0, 1]")
            arr.setflags(write=False)
            lms.append(arr)
        if len(lms) != len(dets):
            raise ValidationError(
                f"{self.image_id}: {len(dets)} detections but {len(lms)} landmark quads"
            )
        object.__setattr__(self, "detections", dets)
        object.__setattr__(self, "landmarks", tuple(lms))

    def pairs(self) -> List[Tuple[Detection, np.ndarray]]:
        return list(zip(self.detections, self.landmarks))


def atomic_write_text(path: PathLike, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows: Iterable[Sequence]) -> str:
    buf = StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(v: float) -> str:
    return repr(float(v))


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _is_header(row: Sequence[str]) -> bool:
    return not any(_is_number(c) for c in row)


def _read_rows(path: PathLike) -> List[Tuple[int, List[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = [(i + 1, [c.strip() for c in row]) for i, row in enumerate(csv.reader(fh))]
    except FileNotFoundError as exc:
        raise ParseError(f"file not found: {path}") from exc
    except (csv.Error, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return [(n, r) for n, r in rows if any(r)]


def _floats(values: Sequence[str], path: PathLike, lineno: int) -> List[float]:
    out = []
    for col, v in enumerate(values):
        try:
            f = float(v)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric value {v!r} in column {col + 1}") from None
        if not math.isfinite(f):
            raise ParseError(f"{path}:{lineno}: non-finite value {v!r} in column {col + 1}")
        out.append(f)
    return out


def corner_permutation(corner_order: Union[str, Sequence[str]]) -> List[int]:
    """Indices that reorder file corners into TL, TR, BL, BR.

    ``corner_order`` names the corners in file order, e.g. ``"TL,TR,BL,BR"``.
    """
    names = corner_order.split(",") if isinstance(corner_order, str) else list(corner_order)
    names = [n.strip().upper() for n in names]
    if sorted(names) != sorted(CORNER_NAMES):
        raise ValidationError(f"corner order must be a permutation of {CORNER_NAMES}, got {names}")
    return [names.index(c) for c in CORNER_NAMES]


def coords_to_points(coords: Sequence[float], layout: str = "xy") -> np.ndarray:
    """Turn 2k flat coordinates into a ``(k, 2)`` point array."""
    arr = np.asarray(coords, dtype=float)
    if layout == "xy":
        return arr.reshape(-1, 2)
    if layout == "block":
        half = arr.size // 2
        return np.column_stack([arr[:half], arr[half:]])
    raise ValidationError(f"unknown landmark layout {layout!r}; choose from {LAYOUTS}")


def points_to_coords(points: np.ndarray, layout: str = "xy") -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if layout == "xy":
        return pts.ravel()
    if layout == "block":
        return np.concatenate([pts[:, 0], pts[:, 1]])
    raise ValidationError(f"unknown landmark layout {layout!r}; choose from {LAYOUTS}")


def read_landmark_csv(
    path: PathLike,
    layout: str = "xy",
    corner_order: Union[str, Sequence[str]] = CORNER_NAMES,
    ids: Optional[Sequence[str]] = None,
    dims: Optional[Mapping[str, ImageDims]] = None,
    normalized: Optional[bool] = None,
) -> List[DatasetRecord]:
    """Read spine landmarks, one image per row.

    Args:
        path: CSV file.
        layout: ``"xy"`` for interleaved coordinates, ``"block"`` for all x then all y.
        corner_order: Corner names in file order; reordered to TL, TR, BL, BR.
        ids: Sidecar image ids, required when rows carry no id column.
        dims: Image sizes by id, used when rows carry no width/height.
        normalized: Force normalized (True) or pixel (False) coordinates;
            None auto-detects values that all lie in ``[0, 1]``.

    Returns:
        One record per data row. Rows that break the spine invariants are
        kept, with the problems listed in ``issues``.
    """
    if layout not in LAYOUTS:
        raise ValidationError(f"unknown landmark layout {layout!r}; choose from {LAYOUTS}")
    perm = corner_permutation(corner_order)
    rows = _read_rows(path)
    if rows and _is_header(rows[0][1]):
        rows = rows[1:]
    if ids is not None and len(ids) != len(rows):
        raise ParseError(f"{path}: {len(rows)} rows but {len(ids)} sidecar ids")

    records: List[DatasetRecord] = []
    seen = set()
    for idx, (lineno, row) in enumerate(rows):
        n = len(row)
        if n == N_COORDS:
            if ids is None:
                raise ParseError(f"{path}:{lineno}: row has no id column and no sidecar id list was given")
            image_id, width, height, coord_cells = str(ids[idx]), None, None, row
        elif n == N_COORDS + 1:
            image_id, width, height, coord_cells = row[0], None, None, row[1:]
        elif n == N_COORDS + 3:
            image_id = row[0]
            width, height = _floats(row[1:3], path, lineno)
            coord_cells = row[3:]
        else:
            raise ParseError(
                f"{path}:{lineno}: expected {N_COORDS}, {N_COORDS + 1} or {N_COORDS + 3} fields, got {n}"
            )
        if not image_id:
            raise ParseError(f"{path}:{lineno}: missing image id")
        if image_id in seen:
            raise ParseError(f"{path}:{lineno}: duplicate image id {image_id!r}")
        seen.add(image_id)
        coords = _floats(coord_cells, path, lineno)

        if width is not None:
            try:
                img = ImageDims(width, height)
            except ValidationError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
        else:
            img = dims.get(image_id) if dims else None

        pts = coords_to_points(coords, layout)
        is_norm = normalized if normalized is not None else bool(np.all((pts >= 0) & (pts <= 1)))
        if is_norm:
            if img is None:
                raise ParseError(f"{path}:{lineno}: normalized coordinates need image dims for {image_id!r}")
            pts = pts * np.array([img.width, img.height])
        quads = pts.reshape(-1, 4, 2)[:, perm]
        spine = SpineLandmarks(quads)
        issues = tuple(spine.problems())
        if issues:
            log.warning("%s:%d (%s): %d validation issue(s): %s", path, lineno, image_id, len(issues), issues[0])
        records.append(DatasetRecord(image_id, img, spine, None, issues, is_norm))
    return records


def write_landmark_csv(
    records: Iterable[DatasetRecord],
    path: PathLike,
    layout: str = "xy",
    corner_order: Union[str, Sequence[str]] = CORNER_NAMES,
) -> None:
    """Write pixel landmarks with an ``image_id, width, height`` prefix and a header row."""
    perm = corner_permutation(corner_order)
    inverse = [perm.index(i) for i in range(4)]
    if layout == "xy":
        coord_names = [f"{a}{k}" for k in range(N_LANDMARKS) for a in "xy"]
    else:
        coord_names = [f"x{k}" for k in range(N_LANDMARKS)] + [f"y{k}" for k in range(N_LANDMARKS)]
    rows: List[List[str]] = [["image_id", "width", "height"] + coord_names]
    for rec in records:
        if rec.landmarks is None or rec.dims is None:
            raise ValidationError(f"record {rec.image_id!r} needs landmarks and dims to be written")
        if len(rec.landmarks) * 8 != N_COORDS:
            raise ValidationError(f"record {rec.image_id!r} does not have {N_LANDMARKS} landmarks")
        pts = rec.landmarks.points[:, inverse].reshape(-1, 2)
        coords = points_to_coords(pts, layout)
        rows.append([rec.image_id, _fmt(rec.dims.width), _fmt(rec.dims.height)] + [_fmt(v) for v in coords])
    atomic_write_text(path, _csv_text(rows))


def read_dims_csv(path: PathLike) -> Dict[str, ImageDims]:
    """Read an ``image_id, width, height`` sidecar table."""
    out: Dict[str, ImageDims] = {}
    rows = _read_rows(path)
    if rows and _is_header(rows[0][1]):
        rows = rows[1:]
    for lineno, row in rows:
        if len(row) != 3:
            raise ParseError(f"{path}:{lineno}: expected image_id,width,height, got {len(row)} fields")
        w, h = _floats(row[1:], path, lineno)
        try:
            out[row[0]] = ImageDims(w, h)
        except ValidationError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    return out


def read_ids(path: PathLike) -> List[str]:
    """Read a sidecar id list: the first column of every nonblank row."""
    return [row[0] for _, row in _read_rows(path)]


def read_angles_csv(
    path: PathLike, order: str = "mt-pt-tl", ids: Optional[Sequence[str]] = None
) -> Dict[str, CobbTriple]:
    """Read ground-truth or predicted Cobb angles keyed by image id.

    A header naming ``mt``, ``pt`` and ``tl`` columns takes precedence over
    ``order``; otherwise the three angle columns are mapped by ``order``.
    """
    if order not in ANGLE_ORDERS:
        raise ValidationError(f"unknown angle order {order!r}; choose from {sorted(ANGLE_ORDERS)}")
    rows = _read_rows(path)
    header = None
    if rows and _is_header(rows[0][1][1:] or rows[0][1]):
        header = [c.lower() for c in rows[0][1]]
        rows = rows[1:]
    if ids is not None and len(ids) != len(rows):
        raise ParseError(f"{path}: {len(rows)} rows but {len(ids)} sidecar ids")

    named = header is not None and {"mt", "pt", "tl"} <= set(header)
    out: Dict[str, CobbTriple] = {}
    for idx, (lineno, row) in enumerate(rows):
        if named:
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            cells = dict(zip(header, row))
            image_id = cells.get("image_id", str(ids[idx]) if ids is not None else "")
            vals = dict(zip(("mt", "pt", "tl"), _floats([cells["mt"], cells["pt"], cells["tl"]], path, lineno)))
        else:
            if len(row) == 3 and ids is not None:
                image_id, cells = str(ids[idx]), row
            elif len(row) == 4:
                image_id, cells = row[0], row[1:]
            else:
                raise ParseError(f"{path}:{lineno}: expected image_id plus 3 angles, got {len(row)} fields")
            vals = dict(zip(ANGLE_ORDERS[order], _floats(cells, path, lineno)))
        if not image_id:
            raise ParseError(f"{path}:{lineno}: missing image id")
        if image_id in out:
            raise ParseError(f"{path}:{lineno}: duplicate image id {image_id!r}")
        out[image_id] = CobbTriple(vals["mt"], vals["pt"], vals["tl"])
    return out


def write_angles_csv(angles: Mapping[str, CobbTriple], path: PathLike) -> None:
    """Write ``image_id, mt, pt, tl, upper_idx, lower_idx, s_shaped`` rows."""
    rows: List[List[str]] = [["image_id", "mt", "pt", "tl", "upper_idx", "lower_idx", "s_shaped"]]
    for image_id, t in angles.items():
        extra = ["" if v is None else str(int(v)) for v in (t.upper_idx, t.lower_idx, t.s_shaped)]
        rows.append([image_id, _fmt(t.mt), _fmt(t.pt), _fmt(t.tl)] + extra)
    atomic_write_text(path, _csv_text(rows))


def write_boxes_csv(boxes: Mapping[str, Sequence[BoundingBox]], path: PathLike) -> None:
    rows: List[List[str]] = [["image_id", "vertebra", "x_min", "y_min", "x_max", "y_max"]]
    for image_id, bs in boxes.items():
        for k, b in enumerate(bs):
            rows.append([image_id, str(k)] + [_fmt(v) for v in b.as_tuple()])
    atomic_write_text(path, _csv_text(rows))


def read_boxes_csv(path: PathLike) -> Dict[str, List[BoundingBox]]:
    out: Dict[str, List[BoundingBox]] = {}
    rows = _read_rows(path)
    if rows and _is_header(rows[0][1]):
        rows = rows[1:]
    for lineno, row in rows:
        if len(row) != 6:
            raise ParseError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
        vals = _floats(row[2:], path, lineno)
        out.setdefault(row[0], []).append(BoundingBox(*vals))
    return out


def prediction_to_dict(rec: PredictionRecord) -> dict:
    return {
        "image_id": rec.image_id,
        "width": float(rec.dims.width),
        "height": float(rec.dims.height),
        "crop_top": float(rec.crop_top),
        "detections": [
            {"box": [float(v) for v in d.box.as_tuple()], "score": float(d.score), "landmarks": lm.tolist()}
            for d, lm in rec.pairs()
        ],
    }


def prediction_from_dict(d: Mapping) -> PredictionRecord:
    try:
        dets, lms = [], []
        for det in d["detections"]:
            box = det["box"]
            if len(box) != 4:
                raise ParseError(f"{d.get('image_id')}: box must have 4 values, got {len(box)}")
            dets.append(Detection(BoundingBox(*map(float, box)), float(det.get("score", 1.0))))
            lms.append(np.asarray(det["landmarks"], dtype=float).reshape(4, 2))
        return PredictionRecord(
            str(d["image_id"]),
            ImageDims(float(d["width"]), float(d["height"])),
            tuple(dets),
            tuple(lms),
            float(d.get("crop_top", 0.0)),
        )
    except KeyError as exc:
        raise ParseError(f"prediction record missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ParseError(f"malformed prediction record: {exc}") from None


def write_predictions(records: Iterable[PredictionRecord], path: PathLike) -> None:
    doc = {
        "format": PREDICTIONS_FORMAT,
        "version": PREDICTIONS_VERSION,
        "records": [prediction_to_dict(r) for r in records],
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def read_predictions(path: PathLike) -> List[PredictionRecord]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ParseError(f"file not found: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: not valid predictions JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != PREDICTIONS_FORMAT:
        raise ParseError(f"{path}: not a {PREDICTIONS_FORMAT} document")
    if doc.get("version") != PREDICTIONS_VERSION:
        raise ParseError(
            f"{path}: unsupported predictions schema version {doc.get('version')!r} "
            f"(expected {PREDICTIONS_VERSION})"
        )
    records = [prediction_from_dict(r) for r in doc.get("records", [])]
    ids = [r.image_id for r in records]
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate image ids in predictions")
    return records


def write_report_json(report: EvalReport, path: PathLike) -> None:
    atomic_write_text(path, json.dumps(report.to_dict(), indent=2) + "\n")


def write_report_csv(report: EvalReport, path: PathLike) -> None:
    rows: List[List[str]] = [["image_id", "numerator", "denominator", "ratio"]]
    for s in report.per_image:
        rows.append([s.image_id, _fmt(s.numerator), _fmt(s.denominator), _fmt(s.ratio)])
    atomic_write_text(path, _csv_text(rows))
