"""Shared lighting presets applied to rendered frames and dataset composites.

Five named modes model the capture conditions the detector has to tolerate:
uniform ceiling light, dimmed light, two oblique sources, and an
overexposing source.  Each mode is a deterministic gain field plus offset so
the same preset behaves identically in the simulator and in dataset
augmentation.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["LIGHTING_MODES", "lighting_field", "apply_lighting"]

LIGHTING_MODES = ("regular", "reduced", "angle_45", "angle_225", "harsh")

# Oblique modes ramp the gain linearly along the given image axis.
_OBLIQUE_BASE = 0.85
_OBLIQUE_AMP = 0.30
_REDUCED_GAIN = 0.45
_HARSH_GAIN = 1.4
_HARSH_OFFSET = 25.0


def _oblique_gain(shape: tuple[int, int], angle_deg: float) -> np.ndarray:
    h, w = shape
    # Centered pixel coordinates scaled isotropically by the half-diagonal,
    # so the fitted gradient direction equals angle_deg for any aspect ratio.
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    radius = math.hypot(cx, cy)
    t = ((xs - cx) * math.cos(math.radians(angle_deg))
         + (ys - cy) * math.sin(math.radians(angle_deg))) / radius
    return (_OBLIQUE_BASE + _OBLIQUE_AMP * t).astype(np.float32)


def lighting_field(shape: tuple[int, int], mode: str):
    """Return (gain, offset) for an image of the given (height, width).

    ``gain`` is a scalar or a float32 (H, W) array; ``offset`` is a scalar
    added after the gain.
    """
    if mode not in LIGHTING_MODES:
        raise ValueError(f"unknown lighting mode {mode!r}, expected one of {LIGHTING_MODES}")
    if mode == "regular":
        return 1.0, 0.0
    if mode == "reduced":
        return _REDUCED_GAIN, 0.0
    if mode == "harsh":
        return _HARSH_GAIN, _HARSH_OFFSET
    angle = 45.0 if mode == "angle_45" else 225.0
    return _oblique_gain(shape, angle), 0.0


def apply_lighting(image: np.ndarray, mode: str) -> np.ndarray:
    """Apply a lighting preset to an 8-bit RGB image.

    "regular" returns an unchanged copy.  "reduced" strictly lowers every
    nonzero pixel (gain 0.45 rounds 1 down to 0).  The oblique modes scale
    by a linear ramp along the 45 or 225 degree image axis, "harsh" pushes
    values up and clips.
    """
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(
            f"expected (H, W, 3) uint8 image, got {image.dtype} {image.shape}"
        )
    gain, offset = lighting_field(image.shape[:2], mode)
    if mode == "regular":
        return image.copy()
    out = image.astype(np.float32)
    if isinstance(gain, np.ndarray):
        out *= gain[..., None]
    else:
        out *= gain
    out += offset
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
