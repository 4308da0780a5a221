"""Closed-form rig geometry: parallax angles, height recovery, and floor homographies.

Coordinate conventions used throughout the package:

* World frame: x runs outward from the robot edge into the monitored zone,
  y runs transverse (along the stripe), z is up.  Units are millimetres.
* The camera sits on a mast at the robot edge, directly above the floor
  reference point ("corner", world x = 0).  The laser emitter shares the
  mast at height ``h_light_mm`` and throws its stripe onto the floor line
  x = ``d_light_mm``.
* Image x coordinates are measured rightward from the principal point and
  increase toward the robot, so the corner reference always sits at larger
  image x than the stripe.  ``parallax_angle`` is positive for raised
  objects under this convention.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "CameraIntrinsics",
    "RigGeometry",
    "StripeObservation",
    "HeightEstimate",
    "CalibrationData",
    "CalibrationError",
    "parallax_angle",
    "height_from_parallax",
    "estimate_height",
    "forward_parallax",
    "estimate_homography",
    "warp_point",
    "displacement_sensitivity",
    "load_calibration",
    "save_calibration",
]

# Relative guard against the vanishing denominator of the height closed form.
DEGENERATE_DENOMINATOR_REL = 1e-6

# Column pitch of the default rectified top-down grid, used to express
# predicted displacements in grid pixels.
DEFAULT_GRID_PITCH_MM = 1.0


class CalibrationError(ValueError):
    """Raised when a calibration file is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with square pixels.

    Attributes:
        f_x: focal length in pixels along image x.
        cx, cy: principal point in pixels.
        width, height: sensor resolution in pixels.
    """

    f_x: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not math.isfinite(self.f_x) or self.f_x <= 0:
            raise ValueError(f"f_x must be a positive finite number, got {self.f_x}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"resolution must be positive, got {self.width}x{self.height}"
            )
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise ValueError(f"principal point must be finite, got ({self.cx}, {self.cy})")


@dataclass(frozen=True)
class RigGeometry:
    """Mounting geometry of the camera/laser mast.

    Attributes:
        h_cam_mm: camera height above the floor.
        h_light_mm: laser emitter height above the floor.
        d_light_mm: horizontal distance from the mast to the stripe's
            resting line on the floor.
    """

    h_cam_mm: float
    h_light_mm: float
    d_light_mm: float

    def __post_init__(self):
        for name in ("h_cam_mm", "h_light_mm", "d_light_mm"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if self.h_cam_mm == self.h_light_mm:
            # Equal mounting heights null the displacement signal entirely.
            warnings.warn(
                "h_cam_mm equals h_light_mm: stripe displacement sensitivity is zero",
                stacklevel=2,
            )


@dataclass(frozen=True)
class StripeObservation:
    """One column's pixel observation of the corner reference and the stripe.

    Both coordinates are measured from the principal point along image x.
    ``x_corner`` is the fixed floor reference below the camera and always
    sits at or beyond the stripe coordinate.
    """

    x_corner: float
    x_obj: float

    def __post_init__(self):
        if not (math.isfinite(self.x_corner) and math.isfinite(self.x_obj)):
            raise ValueError(
                f"observation must be finite, got ({self.x_corner}, {self.x_obj})"
            )
        if self.x_corner < self.x_obj:
            raise ValueError(
                f"x_corner ({self.x_corner}) must be >= x_obj ({self.x_obj}); "
                "the corner reference is the far end of the image-x ordering"
            )


@dataclass(frozen=True)
class HeightEstimate:
    """Recovered object geometry for a single observation.

    ``valid`` is False when the recovered height falls outside
    [0, min(h_cam, h_light)); the raw value is preserved rather than clamped
    so callers can log how far out of range it fell.
    """

    h_obj_mm: float
    d_obj_mm: float
    phi_1_rad: float
    valid: bool


def parallax_angle(x_corner: float, x_obj: float, f_x: float) -> float:
    """Angle in radians between the corner ray and the stripe ray.

    Computed as atan(x_corner / f_x) - atan(x_obj / f_x).  Positive whenever
    the stripe is displaced toward the robot (a raised object), zero when the
    two coordinates coincide, and antisymmetric under swapping its inputs.
    """
    if not math.isfinite(f_x) or f_x <= 0:
        raise ValueError(f"f_x must be positive and finite, got {f_x}")
    if not (math.isfinite(x_corner) and math.isfinite(x_obj)):
        raise ValueError(f"pixel coordinates must be finite, got ({x_corner}, {x_obj})")
    return math.atan(x_corner / f_x) - math.atan(x_obj / f_x)


def height_from_parallax(phi_1: float, rig: RigGeometry) -> HeightEstimate:
    """Recover object height and stand-off distance from a parallax angle.

    The closed form is

        h_obj = h_light * (d_light - h_cam * tan(phi_1))
                        / (d_light - h_light * tan(phi_1))

    with d_obj = d_light * (1 - h_obj / h_light), the horizontal distance
    from the mast to the point where the stripe meets the object.  The
    denominator vanishes when the stripe ray grazes the emitter height; a
    guard of 1e-6 relative to d_light raises instead of returning garbage.

    Raises:
        ValueError: for non-finite input or a degenerate denominator.
    """
    if not math.isfinite(phi_1):
        raise ValueError(f"phi_1 must be finite, got {phi_1}")
    t = math.tan(phi_1)
    denom = rig.d_light_mm - rig.h_light_mm * t
    if abs(denom) <= DEGENERATE_DENOMINATOR_REL * rig.d_light_mm:
        raise ValueError(
            f"degenerate parallax angle {phi_1}: denominator "
            f"{denom} is within guard of zero"
        )
    h_obj = rig.h_light_mm * (rig.d_light_mm - rig.h_cam_mm * t) / denom
    d_obj = rig.d_light_mm * (1.0 - h_obj / rig.h_light_mm)
    valid = 0.0 <= h_obj < min(rig.h_cam_mm, rig.h_light_mm)
    if not valid:
        logger.debug("height estimate out of range: h_obj=%.3f mm", h_obj)
    return HeightEstimate(h_obj_mm=h_obj, d_obj_mm=d_obj, phi_1_rad=phi_1, valid=valid)


def estimate_height(
    obs: StripeObservation, intr: CameraIntrinsics, rig: RigGeometry
) -> HeightEstimate:
    """Convenience composition of parallax_angle and height_from_parallax."""
    phi_1 = parallax_angle(obs.x_corner, obs.x_obj, intr.f_x)
    return height_from_parallax(phi_1, rig)


def forward_parallax(h_obj_mm: float, rig: RigGeometry) -> float:
    """Parallax angle produced by an object of the given height.

    Algebraic inverse of height_from_parallax:

        tan(phi_1) = d_light * (h_light - h_obj) / (h_light * (h_cam - h_obj))

    An object of zero height yields tan(phi_1) = d_light / h_cam (the ray to
    the resting stripe), and h_obj -> h_light drives the angle to zero.
    """
    if not math.isfinite(h_obj_mm):
        raise ValueError(f"h_obj_mm must be finite, got {h_obj_mm}")
    if h_obj_mm >= rig.h_cam_mm:
        raise ValueError(
            f"h_obj_mm={h_obj_mm} is not below the camera height {rig.h_cam_mm}"
        )
    t = (
        rig.d_light_mm
        * (rig.h_light_mm - h_obj_mm)
        / (rig.h_light_mm * (rig.h_cam_mm - h_obj_mm))
    )
    return math.atan(t)


def _normalise_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalisation: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    shifted = pts - centroid
    mean_dist = np.mean(np.linalg.norm(shifted, axis=1))
    scale = math.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    T = np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    ones = np.ones((pts.shape[0], 1))
    normed = (T @ np.hstack([pts, ones]).T).T
    return normed[:, :2], T


def estimate_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Estimate the 3x3 homography mapping src points onto dst points.

    Uses the normalised direct linear transform.  At least four
    correspondences are required; with exactly four in general position the
    result is exact up to floating point.

    Args:
        src: (N, 2) source points.
        dst: (N, 2) destination points.

    Returns:
        H with H[2, 2] == 1 such that dst ~ H @ [src, 1].

    Raises:
        ValueError: fewer than four points, mismatched shapes, or a
            degenerate (non-invertible) configuration.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise ValueError(
            f"expected matching (N, 2) arrays, got {src.shape} and {dst.shape}"
        )
    if src.shape[0] < 4:
        raise ValueError(f"need at least 4 correspondences, got {src.shape[0]}")
    if not (np.isfinite(src).all() and np.isfinite(dst).all()):
        raise ValueError("correspondences must be finite")

    src_n, T_src = _normalise_points(src)
    dst_n, T_dst = _normalise_points(dst)

    rows = []
    for (x, y), (u, v) in zip(src_n, dst_n):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    A = np.array(rows)
    _, s, vt = np.linalg.svd(A)
    H_n = vt[-1].reshape(3, 3)
    H = np.linalg.inv(T_dst) @ H_n @ T_src

    if abs(H[2, 2]) < 1e-12 or abs(np.linalg.det(H)) < 1e-12:
        raise ValueError("degenerate correspondences: homography is not invertible")
    return H / H[2, 2]


def warp_point(point, H: np.ndarray):
    """Apply a homography to a single 2-D point with perspective divide.

    Raises:
        ValueError: when the point maps to infinity (homogeneous w ~ 0).
    """
    x, y = float(point[0]), float(point[1])
    vec = H @ np.array([x, y, 1.0])
    if abs(vec[2]) < 1e-12:
        raise ValueError(f"point ({x}, {y}) maps to infinity under this homography")
    return float(vec[0] / vec[2]), float(vec[1] / vec[2])


def displacement_sensitivity(
    rig: RigGeometry, h_obj_mm: float, grid_pitch_mm: float = DEFAULT_GRID_PITCH_MM
) -> float:
    """Predicted stripe displacement, in rectified top-down grid pixels.

    An object of height h moves the stripe's apparent floor position from
    d_light to d_obj * h_cam / (h_cam - h); the absolute shift divided by
    the grid pitch is the displacement the pipeline would measure.  The
    measure grows strictly with |h_cam - h_light| for any fixed positive
    object height, which is what makes taller camera offsets preferable.
    """
    if not math.isfinite(h_obj_mm) or h_obj_mm < 0:
        raise ValueError(f"h_obj_mm must be non-negative and finite, got {h_obj_mm}")
    if h_obj_mm >= min(rig.h_cam_mm, rig.h_light_mm):
        raise ValueError(
            f"h_obj_mm={h_obj_mm} outside measurable range "
            f"[0, {min(rig.h_cam_mm, rig.h_light_mm)})"
        )
    if grid_pitch_mm <= 0:
        raise ValueError(f"grid_pitch_mm must be positive, got {grid_pitch_mm}")
    d_obj = rig.d_light_mm * (1.0 - h_obj_mm / rig.h_light_mm)
    apparent = d_obj * rig.h_cam_mm / (rig.h_cam_mm - h_obj_mm)
    return abs(rig.d_light_mm - apparent) / grid_pitch_mm


@dataclass
class CalibrationData:
    """Bundle loaded from a calibration JSON file.

    ``homography`` maps original image pixels (u, v) to floor coordinates
    (x, y) in millimetres.  ``extras`` carries any additional keys (the
    stripe pipeline stores its thresholds there) so round-trips preserve
    them.
    """

    intrinsics: CameraIntrinsics
    rig: RigGeometry
    homography: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        H = np.asarray(self.homography, dtype=float)
        if H.shape != (3, 3):
            raise CalibrationError(f"homography must be 3x3, got {H.shape}")
        if not np.isfinite(H).all():
            raise CalibrationError("homography contains non-finite entries")
        if abs(np.linalg.det(H)) < 1e-12:
            raise CalibrationError("homography is not invertible")
        if abs(H[2, 2]) < 1e-12:
            raise CalibrationError("homography has a vanishing bottom-right entry")
        self.homography = H / H[2, 2]


_RESERVED_KEYS = {"intrinsics", "rig", "homography"}


def load_calibration(path) -> CalibrationData:
    """Load and validate a calibration JSON file.

    Raises:
        CalibrationError: file missing, malformed JSON (with line/column in
            the message), or missing/invalid fields.
    """
    path = Path(path)
    if not path.exists():
        raise CalibrationError(f"calibration file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationError(
            f"malformed JSON in {path}: {exc.msg} at line {exc.lineno} column {exc.colno}"
        ) from exc

    try:
        intr_raw = raw["intrinsics"]
        rig_raw = raw["rig"]
        hom_raw = raw["homography"]
    except (KeyError, TypeError) as exc:
        raise CalibrationError(
            f"{path}: calibration requires 'intrinsics', 'rig' and 'homography' keys"
        ) from exc

    try:
        intr = CameraIntrinsics(
            f_x=float(intr_raw["f_x"]),
            cx=float(intr_raw["cx"]),
            cy=float(intr_raw["cy"]),
            width=int(intr_raw["width"]),
            height=int(intr_raw["height"]),
        )
        rig = RigGeometry(
            h_cam_mm=float(rig_raw["h_cam_mm"]),
            h_light_mm=float(rig_raw["h_light_mm"]),
            d_light_mm=float(rig_raw["d_light_mm"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationError(f"{path}: {exc}") from exc

    extras = {k: v for k, v in raw.items() if k not in _RESERVED_KEYS}
    try:
        return CalibrationData(
            intrinsics=intr, rig=rig, homography=np.array(hom_raw, dtype=float),
            extras=extras,
        )
    except (CalibrationError, ValueError) as exc:
        raise CalibrationError(f"{path}: {exc}") from exc


def save_calibration(calib: CalibrationData, path) -> None:
    """Write a calibration bundle as JSON, preserving extra keys."""
    payload = dict(calib.extras)
    payload["intrinsics"] = {
        "f_x": calib.intrinsics.f_x,
        "cx": calib.intrinsics.cx,
        "cy": calib.intrinsics.cy,
        "width": calib.intrinsics.width,
        "height": calib.intrinsics.height,
    }
    payload["rig"] = {
        "h_cam_mm": calib.rig.h_cam_mm,
        "h_light_mm": calib.rig.h_light_mm,
        "d_light_mm": calib.rig.d_light_mm,
    }
    payload["homography"] = calib.homography.tolist()
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
