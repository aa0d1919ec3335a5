"""SVG overlays of the processing stages for one image.

Layers (``<g>`` ids): ``boxes-kept``, ``boxes-rejected``, ``landmarks``,
``smoothed``, ``curve`` and ``warnings``. Every box is a ``<rect>`` with
class ``box kept`` or ``box rejected``.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .geometry import BoundingBox, ImageDims, SpineLandmarks
from .postprocess import PolyFit

SVG_NS = "http://www.w3.org/2000/svg"

STYLE = """
.box { fill: none; stroke-width: 3; }
.box.kept { stroke: #1f77b4; }
.box.rejected { stroke: #d62728; stroke-dasharray: 12 6; }
.lm { fill: #ff7f0e; }
.lm.smoothed { fill: #2ca02c; }
.curve { fill: none; stroke: #2ca02c; stroke-width: 2; }
.warning { fill: #d62728; font: 40px sans-serif; }
"""


def _num(v: float) -> str:
    return f"{float(v):.3f}".rstrip("0").rstrip(".")


def _rects(parent: ET.Element, boxes: Iterable[BoundingBox], cls: str, dy: float) -> None:
    for b in boxes:
        ET.SubElement(
            parent,
            "rect",
            {
                "class": cls,
                "x": _num(b.x_min),
                "y": _num(b.y_min + dy),
                "width": _num(b.width),
                "height": _num(b.height),
            },
        )


def _dots(parent: ET.Element, spine: SpineLandmarks, cls: str, r: float = 4.0) -> None:
    for x, y in spine.flat():
        ET.SubElement(parent, "circle", {"class": cls, "cx": _num(x), "cy": _num(y), "r": _num(r)})


def render_svg(
    dims: ImageDims,
    kept: Sequence[BoundingBox] = (),
    rejected: Sequence[BoundingBox] = (),
    landmarks: Optional[SpineLandmarks] = None,
    smoothed: Optional[SpineLandmarks] = None,
    fits: Optional[Dict[str, PolyFit]] = None,
    crop_offset: float = 0.0,
    warnings: Sequence[str] = (),
    title: Optional[str] = None,
) -> str:
    """Draw boxes, landmarks and fitted curves over an empty canvas of the image size.

    Boxes are given in cropped-image coordinates and shifted down by
    ``crop_offset``; landmarks are already in full-image coordinates.
    """
    root = ET.Element(
        "svg",
        {
            "xmlns": SVG_NS,
            "width": _num(dims.width),
            "height": _num(dims.height),
            "viewBox": f"0 0 {_num(dims.width)} {_num(dims.height)}",
        },
    )
    if title:
        ET.SubElement(root, "title").text = title
    ET.SubElement(root, "style").text = STYLE
    _rects(ET.SubElement(root, "g", {"id": "boxes-kept"}), kept, "box kept", crop_offset)
    _rects(ET.SubElement(root, "g", {"id": "boxes-rejected"}), rejected, "box rejected", crop_offset)

    lm_layer = ET.SubElement(root, "g", {"id": "landmarks"})
    if landmarks is not None:
        _dots(lm_layer, landmarks, "lm")
    sm_layer = ET.SubElement(root, "g", {"id": "smoothed"})
    if smoothed is not None:
        _dots(sm_layer, smoothed, "lm smoothed")

    curve_layer = ET.SubElement(root, "g", {"id": "curve"})
    if fits and smoothed is not None:
        ys = smoothed.points[..., 1]
        grid = np.linspace(ys.min(), ys.max(), 100)
        for name, fit in sorted(fits.items()):
            pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in zip(fit(grid), grid))
            ET.SubElement(curve_layer, "polyline", {"class": "curve", "data-chain": name, "points": pts})

    warn_layer = ET.SubElement(root, "g", {"id": "warnings"})
    msgs: List[str] = list(warnings)
    if not kept and not rejected and landmarks is None:
        msgs.insert(0, "no detections")
    for k, msg in enumerate(msgs):
        ET.SubElement(warn_layer, "text", {"class": "warning", "x": "20", "y": _num(60 + 50 * k)}).text = msg

    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"
