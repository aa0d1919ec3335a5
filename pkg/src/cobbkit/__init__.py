"""Cobb angle estimation toolkit: landmark geometry, detector post-processing,
three-angle Cobb computation, SMAPE scoring and synthetic spines."""

__version__ = "0.1.0"

from .cobb import CobbTriple, angle_matrix, cobb_angles, is_s_shape
from .errors import CobbKitError, ConfigError, ParseError, ValidationError
from .geometry import (
    BoundingBox,
    Detection,
    ImageDims,
    Point2,
    SpineLandmarks,
    VertebraQuad,
    denormalize_landmarks,
    direction_vector,
    normalize_landmarks,
    quad_to_gt_box,
    vertebra_midpoints,
)
from .metrics import EvalReport, mae_per_angle, smape
from .postprocess import (
    CropSpec,
    PolyFit,
    apply_crop,
    compute_crop,
    enforce_count,
    fit_polynomial,
    reject_outliers,
    smooth_landmarks,
)

__all__ = [
    "BoundingBox",
    "CobbKitError",
    "CobbTriple",
    "ConfigError",
    "CropSpec",
    "Detection",
    "EvalReport",
    "ImageDims",
    "ParseError",
    "Point2",
    "PolyFit",
    "SpineLandmarks",
    "ValidationError",
    "VertebraQuad",
    "angle_matrix",
    "apply_crop",
    "cobb_angles",
    "compute_crop",
    "denormalize_landmarks",
    "direction_vector",
    "enforce_count",
    "fit_polynomial",
    "is_s_shape",
    "mae_per_angle",
    "normalize_landmarks",
    "quad_to_gt_box",
    "reject_outliers",
    "smape",
    "smooth_landmarks",
    "vertebra_midpoints",
]
