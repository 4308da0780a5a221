"""Laser stripe perception pipeline.

A frame flows through: HSV conversion and color thresholding, morphological
opening, top-down metric rectification through the calibrated floor
homography, per-column stripe profiling, spatial and temporal denoising,
then two independent checks:

* continuity: columns whose stripe left the calibrated baseline band form
  gaps; a gap longer than the threshold trips the cutoff trigger.
* displacement: stripe segments found outside the baseline band are fed
  through the parallax closed form to estimate obstacle heights.

All metric quantities are millimetres; grid columns run along the stripe
(transverse y axis), grid rows along the displacement (outward x) axis.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import cv2
import numpy as np

from .geometry import (
    CalibrationData,
    HeightEstimate,
    StripeObservation,
    height_from_parallax,
    parallax_angle,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Frame",
    "HsvThreshold",
    "RectifyGrid",
    "RectifiedView",
    "StripeProfile",
    "ContinuityReport",
    "TemporalState",
    "PipelineConfig",
    "PerceptionEvent",
    "HeightReading",
    "DisplacementResult",
    "HoughLine",
    "StripePipeline",
    "PipelineError",
    "rgb_to_hsv",
    "threshold_stripe",
    "morph_open",
    "hough_dominant_line",
    "rectify",
    "extract_profile",
    "spatial_denoise",
    "temporal_denoise",
    "continuity_check",
    "measure_displacement",
    "process_frame",
    "profile_to_dict",
    "profile_from_dict",
    "event_to_dict",
    "write_events_jsonl",
]

# Subsampling stride for the per-frame percentile estimate of S/V minima.
_PERCENTILE_STRIDE = 4
# Cap on points fed to the Hough accumulator inside the pipeline.
_HOUGH_MAX_POINTS = 4000


class PipelineError(RuntimeError):
    """Raised for unusable pipeline state (missing baseline, geometry mismatch)."""


@dataclass(frozen=True)
class Frame:
    """One RGB camera frame with a millisecond timestamp."""

    pixels: np.ndarray
    ts_ms: int = 0

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(
                f"pixels must be a (H, W, 3) uint8 array, got "
                f"{getattr(p, 'dtype', type(p))} {getattr(p, 'shape', None)}"
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class HsvThreshold:
    """Hue window in degrees plus saturation/value minima in [0, 1].

    ``hue_lo > hue_hi`` selects a window wrapping through 0 degrees, which
    is the normal case for a red laser.
    """

    hue_lo: float
    hue_hi: float
    sat_min: float
    val_min: float

    def __post_init__(self):
        for name in ("hue_lo", "hue_hi"):
            v = getattr(self, name)
            if not 0.0 <= v < 360.0:
                raise ValueError(f"{name} must be in [0, 360), got {v}")
        for name in ("sat_min", "val_min"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class RectifyGrid:
    """Top-down metric grid: rows sweep outward x, columns transverse y.

    The transverse extent deliberately overshoots the monitored zone: the
    stripe on top of an object rectifies to floor coordinates magnified by
    h_cam / (h_cam - h_obj), so evidence for objects near the zone edge
    lands beyond it.
    """

    x0_mm: float = 0.0
    x1_mm: float = 360.0
    y0_mm: float = -340.0
    y1_mm: float = 340.0
    pitch_mm: float = 0.5

    def __post_init__(self):
        if self.pitch_mm <= 0:
            raise ValueError(f"pitch_mm must be positive, got {self.pitch_mm}")
        if self.x1_mm <= self.x0_mm or self.y1_mm <= self.y0_mm:
            raise ValueError("grid extents must be increasing")

    @property
    def n_rows(self) -> int:
        return int(round((self.x1_mm - self.x0_mm) / self.pitch_mm)) + 1

    @property
    def n_cols(self) -> int:
        return int(round((self.y1_mm - self.y0_mm) / self.pitch_mm)) + 1

    def row_coords(self) -> np.ndarray:
        return self.x0_mm + np.arange(self.n_rows) * self.pitch_mm

    def col_coords(self) -> np.ndarray:
        return self.y0_mm + np.arange(self.n_cols) * self.pitch_mm


@dataclass
class RectifiedView:
    """Sampled top-down view; cells outside the source image are invalid."""

    data: np.ndarray
    valid: np.ndarray
    grid: RectifyGrid


@dataclass
class StripeProfile:
    """Per-column stripe summary over the rectified grid.

    center_mm is NaN and width_mm is 0 where the column has no stripe.
    mm_per_cell is the row pitch (displacement resolution), pitch_mm the
    column pitch along the stripe.
    """

    y0_mm: float
    pitch_mm: float
    mm_per_cell: float
    present: np.ndarray
    center_mm: np.ndarray
    width_mm: np.ndarray

    @property
    def n_columns(self) -> int:
        return self.present.shape[0]

    def col_coords(self) -> np.ndarray:
        return self.y0_mm + np.arange(self.n_columns) * self.pitch_mm

    def geometry_key(self):
        return (self.y0_mm, self.pitch_mm, self.mm_per_cell, self.n_columns)


@dataclass(frozen=True)
class Gap:
    start_mm: float
    end_mm: float

    @property
    def length_mm(self) -> float:
        return self.end_mm - self.start_mm


@dataclass(frozen=True)
class ObjectEvidence:
    """One displaced-stripe cluster: measured extent plus shadow reach.

    start/end bound the cluster's de-magnified reading positions (the
    object's transverse extent on the floor); shadow_start/shadow_end bound
    the stripe region the object can darken, combining the sheet it blocks
    over its own span with the lit floor it hides from the oblique camera
    (the span scaled by h_cam / (h_cam - h) away from the camera axis).
    """

    start_mm: float
    end_mm: float
    h_obj_mm: float
    shadow_start_mm: float
    shadow_end_mm: float


@dataclass
class ContinuityReport:
    triggered: bool
    max_gap_mm: float
    gaps: list
    no_stripe: bool = False


@dataclass(frozen=True)
class TemporalState:
    """Ring of the last ``window`` profiles, fused by strict majority vote.

    A disturbance therefore has to persist for the majority of the window
    (2 of 3 at the default) before it shows up in the fused profile, which
    delays confirmation by one inter-frame interval after the first
    disturbed frame.

    With prior_present=True the slots not yet filled vote "present", so a
    column can only read as absent once a majority of the full window has
    actually seen it empty.  This keeps single-frame dropouts at stream
    start from registering as gaps.
    """

    window: int = 3
    profiles: tuple = ()
    prior_present: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


@dataclass(frozen=True)
class HeightReading:
    pos_mm: float
    h_obj_mm: float
    valid: bool


@dataclass
class DisplacementResult:
    """Per-column displacement of the stripe against the baseline.

    footprint marks the columns covered by displaced-stripe evidence after
    projecting each disturbed column back to its true transverse position
    (an elevated stripe rectifies to columns magnified by
    h_cam / (h_cam - h), so the raw disturbed set overstates the extent).
    """

    y_mm: np.ndarray
    displacement_mm: np.ndarray
    disturbed: np.ndarray
    noise_floor_mm: float
    observations: list = field(default_factory=list)
    heights: list = field(default_factory=list)
    footprint: np.ndarray | None = None


@dataclass
class PerceptionEvent:
    ts_ms: int
    triggered: bool
    max_gap_mm: float
    gaps: list
    heights: list
    no_stripe: bool = False
    error: str | None = None


@dataclass(frozen=True)
class HoughLine:
    """Dominant line in (rho, theta) form: x cos(theta) + y sin(theta) = rho."""

    rho_px: float
    theta_deg: float
    votes: int

    def distance(self, x, y):
        th = math.radians(self.theta_deg)
        return np.abs(np.asarray(x) * math.cos(th) + np.asarray(y) * math.sin(th) - self.rho_px)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) uint8 RGB image to float32 HSV.

    Hue is in degrees [0, 360); saturation and value are in [0, 1]
    (standard hexcone conversion).
    """
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8, got {rgb.dtype} {rgb.shape}")
    return cv2.cvtColor(rgb.astype(np.float32) / 255.0, cv2.COLOR_RGB2HSV)


def threshold_stripe(hsv: np.ndarray, thr: HsvThreshold) -> np.ndarray:
    """Binary stripe mask from an HSV grid, wrap-aware in hue."""
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    if thr.hue_lo <= thr.hue_hi:
        in_hue = (h >= thr.hue_lo) & (h <= thr.hue_hi)
    else:
        in_hue = (h >= thr.hue_lo) | (h <= thr.hue_hi)
    return in_hue & (s >= thr.sat_min) & (v >= thr.val_min)


def morph_open(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Morphological opening with a square element of side 2 * radius + 1.

    Erosion followed by dilation: connected specks smaller than the element
    disappear, surviving shapes keep their extent.  Opening is idempotent.
    """
    if mask.dtype != np.bool_ or mask.ndim != 2:
        raise ValueError(f"expected 2-D bool mask, got {mask.dtype} {mask.shape}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return mask.copy()
    k = np.ones((2 * radius + 1, 2 * radius + 1), np.uint8)
    opened = cv2.morphologyEx(mask.astype(np.uint8), cv2.MORPH_OPEN, k)
    return opened.astype(bool)


def hough_dominant_line(mask: np.ndarray, max_points: int | None = None) -> HoughLine:
    """Strongest line through a binary mask, on a 1 px by 1 degree accumulator.

    Theta spans [0, 180) degrees with rho = x cos(theta) + y sin(theta)
    rounded to integer pixels, so a horizontal row y=c votes at theta=90,
    rho=c and a vertical column x=c at theta=0, rho=c.  Vote ties resolve
    to the smaller theta, then the smaller rho.

    Masks larger than ``max_points`` are subsampled with a fixed-seed
    uniform draw before voting (a plain stride would alias against
    regularly structured masks); vote counts become approximate, the
    argmax stays stable for any dominant line and reruns are identical.
    """
    if mask.dtype != np.bool_ or mask.ndim != 2:
        raise ValueError(f"expected 2-D bool mask, got {mask.dtype} {mask.shape}")
    pts = np.argwhere(mask)
    if pts.shape[0] == 0:
        raise ValueError("empty mask has no dominant line")
    if max_points is not None and pts.shape[0] > max_points:
        rng = np.random.default_rng(1815)
        keep = rng.choice(pts.shape[0], size=max_points, replace=False)
        pts = pts[np.sort(keep)]
    ys = pts[:, 0].astype(np.float64)
    xs = pts[:, 1].astype(np.float64)
    diag = int(math.ceil(math.hypot(*mask.shape)))
    thetas = np.deg2rad(np.arange(180))
    rho = xs[:, None] * np.cos(thetas) + ys[:, None] * np.sin(thetas)
    rho_idx = np.rint(rho).astype(np.int64) + diag
    n_rho = 2 * diag + 1
    flat = (np.arange(180)[None, :] + np.zeros_like(rho_idx)) * n_rho + rho_idx
    acc = np.bincount(flat.ravel(), minlength=180 * n_rho).reshape(180, n_rho)
    best = int(np.argmax(acc))
    theta_i, rho_i = divmod(best, n_rho)
    return HoughLine(rho_px=float(rho_i - diag), theta_deg=float(theta_i), votes=int(acc.ravel()[best]))


class _RectifyMap:
    """Precomputed sampling map from grid cells into a source image."""

    def __init__(self, H_px2mm: np.ndarray, grid: RectifyGrid, shape: tuple[int, int]):
        h_img, w_img = shape
        Hinv = np.linalg.inv(H_px2mm)
        xs = grid.row_coords()
        ys = grid.col_coords()
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        ones = np.ones_like(gx)
        pts = np.stack([gx, gy, ones], axis=0).reshape(3, -1)
        uvw = Hinv @ pts
        with np.errstate(divide="ignore", invalid="ignore"):
            u = uvw[0] / uvw[2]
            v = uvw[1] / uvw[2]
        finite = np.isfinite(u) & np.isfinite(v) & (np.abs(uvw[2]) > 1e-12)
        u = np.where(finite, u, -1.0)
        v = np.where(finite, v, -1.0)
        self.grid = grid
        self.shape = shape
        self.u = u.reshape(grid.n_rows, grid.n_cols)
        self.v = v.reshape(grid.n_rows, grid.n_cols)
        self.valid = (
            finite.reshape(grid.n_rows, grid.n_cols)
            & (self.u >= 0)
            & (self.u <= w_img - 1)
            & (self.v >= 0)
            & (self.v <= h_img - 1)
        )
        iu = np.clip(np.rint(self.u), 0, w_img - 1).astype(np.int32)
        iv = np.clip(np.rint(self.v), 0, h_img - 1).astype(np.int32)
        self.flat_nearest = iv * w_img + iu

    def sample_nearest(self, image: np.ndarray) -> np.ndarray:
        return image.reshape(-1)[self.flat_nearest]

    def sample_bilinear(self, image: np.ndarray) -> np.ndarray:
        h_img, w_img = self.shape
        u0 = np.clip(np.floor(self.u), 0, w_img - 2).astype(np.int32)
        v0 = np.clip(np.floor(self.v), 0, h_img - 2).astype(np.int32)
        fu = np.clip(self.u - u0, 0.0, 1.0)
        fv = np.clip(self.v - v0, 0.0, 1.0)
        img = image.astype(np.float32)
        tl = img[v0, u0]
        tr = img[v0, u0 + 1]
        bl = img[v0 + 1, u0]
        br = img[v0 + 1, u0 + 1]
        return (
            tl * (1 - fu) * (1 - fv)
            + tr * fu * (1 - fv)
            + bl * (1 - fu) * fv
            + br * fu * fv
        )


def rectify(
    image: np.ndarray,
    H_px2mm: np.ndarray,
    grid: RectifyGrid,
    method: str = "nearest",
) -> RectifiedView:
    """Warp an image or mask into the top-down metric grid.

    Nearest-neighbour sampling is for binary masks, bilinear for intensity
    images.  Cells whose source location falls outside the image are marked
    invalid; their data is False (masks) or NaN (intensity).
    """
    if method not in ("nearest", "bilinear"):
        raise ValueError(f"method must be 'nearest' or 'bilinear', got {method!r}")
    if image.ndim != 2:
        raise ValueError(f"expected single-channel image, got shape {image.shape}")
    m = _RectifyMap(np.asarray(H_px2mm, float), grid, image.shape)
    if method == "nearest":
        data = m.sample_nearest(image)
        if image.dtype == np.bool_:
            data = data & m.valid
        return RectifiedView(data=data, valid=m.valid.copy(), grid=grid)
    if image.dtype == np.bool_:
        raise ValueError("bilinear sampling is for intensity images, not masks")
    data = m.sample_bilinear(image)
    data = np.where(m.valid, data, np.nan)
    return RectifiedView(data=data, valid=m.valid.copy(), grid=grid)


def extract_profile(view: RectifiedView) -> StripeProfile:
    """Collapse a rectified binary view into a per-column stripe profile.

    Per column: presence is any set cell, the center is the centroid of the
    set cells' row coordinates, the width is their count times the row
    pitch.
    """
    if view.data.dtype != np.bool_:
        raise ValueError("extract_profile expects a binary rectified view")
    cells = view.data & view.valid
    counts = cells.sum(axis=0)
    xs = view.grid.row_coords()
    sums = xs @ cells
    present = counts > 0
    safe = np.where(present, counts, 1)
    center = np.where(present, sums / safe, np.nan)
    width = counts * view.grid.pitch_mm
    return StripeProfile(
        y0_mm=view.grid.y0_mm,
        pitch_mm=view.grid.pitch_mm,
        mm_per_cell=view.grid.pitch_mm,
        present=present,
        center_mm=center.astype(float),
        width_mm=width.astype(float),
    )


def _sliding_sum(values: np.ndarray, win: int) -> np.ndarray:
    return np.convolve(values.astype(float), np.ones(win), mode="same")


def spatial_denoise(profile: StripeProfile, window_mm: float = 5.0) -> StripeProfile:
    """Majority-vote presence and running-mean smoothing along the stripe.

    The window is window_mm converted to columns and forced odd.  Presence
    becomes the strict majority over the window (shrinking naturally at the
    array edges), so an isolated one-column dropout is filled while any gap
    wider than half the window survives.  Center and width are averaged over
    the present columns inside the window.
    """
    if window_mm <= 0:
        raise ValueError(f"window_mm must be positive, got {window_mm}")
    win = max(1, int(round(window_mm / profile.pitch_mm)))
    if win % 2 == 0:
        win += 1
    if win == 1:
        return replace(profile)
    present_f = profile.present.astype(float)
    counts = _sliding_sum(present_f, win)
    sizes = _sliding_sum(np.ones_like(present_f), win)
    new_present = counts * 2.0 > sizes
    center_filled = np.where(profile.present, profile.center_mm, 0.0)
    width_filled = np.where(profile.present, profile.width_mm, 0.0)
    center_sums = _sliding_sum(center_filled, win)
    width_sums = _sliding_sum(width_filled, win)
    with np.errstate(invalid="ignore", divide="ignore"):
        center = np.where(new_present & (counts > 0), center_sums / counts, np.nan)
        width = np.where(new_present & (counts > 0), width_sums / counts, 0.0)
    return StripeProfile(
        y0_mm=profile.y0_mm,
        pitch_mm=profile.pitch_mm,
        mm_per_cell=profile.mm_per_cell,
        present=new_present,
        center_mm=center,
        width_mm=width,
    )


def temporal_denoise(
    state: TemporalState, profile: StripeProfile
) -> tuple[TemporalState, StripeProfile]:
    """Push a profile into the ring and fuse by per-column strict majority.

    Presence requires a strict majority of the buffered frames; fused center
    and width are means over the frames where the column was present.  All
    buffered profiles must share grid geometry.
    """
    for old in state.profiles:
        if old.geometry_key() != profile.geometry_key():
            raise PipelineError(
                f"profile geometry {profile.geometry_key()} does not match "
                f"buffered geometry {old.geometry_key()}"
            )
    ring = (state.profiles + (profile,))[-state.window:]
    n = len(ring)
    present_stack = np.stack([p.present for p in ring])
    counts = present_stack.sum(axis=0)
    if state.prior_present:
        fused_present = (counts + (state.window - n)) * 2 > state.window
    else:
        fused_present = counts * 2 > n
    center_stack = np.stack([np.where(p.present, p.center_mm, 0.0) for p in ring])
    width_stack = np.stack([np.where(p.present, p.width_mm, 0.0) for p in ring])
    safe = np.where(counts > 0, counts, 1)
    center = np.where(fused_present & (counts > 0), center_stack.sum(axis=0) / safe, np.nan)
    width = np.where(fused_present & (counts > 0), width_stack.sum(axis=0) / safe, 0.0)
    fused = StripeProfile(
        y0_mm=profile.y0_mm,
        pitch_mm=profile.pitch_mm,
        mm_per_cell=profile.mm_per_cell,
        present=fused_present,
        center_mm=center,
        width_mm=width,
    )
    return TemporalState(
        window=state.window, profiles=ring, prior_present=state.prior_present
    ), fused


def cluster_evidence(
    readings: Sequence[HeightReading],
    h_cam_mm: float,
    merge_mm: float = 6.0,
) -> list[ObjectEvidence]:
    """Group valid height readings into per-object evidence clusters.

    Readings sorted by position split wherever neighbours sit more than
    merge_mm apart; each cluster keeps its position extent and median
    height and predicts its shadow reach on the stripe.  The merge distance
    errs toward fusing close objects rather than splitting one object on a
    reading dropout, since overstating an extent is the safe direction.
    """
    if h_cam_mm <= 0:
        raise ValueError(f"h_cam_mm must be positive, got {h_cam_mm}")
    if merge_mm <= 0:
        raise ValueError(f"merge_mm must be positive, got {merge_mm}")
    pts = sorted((r.pos_mm, r.h_obj_mm) for r in readings if r.valid)
    groups: list[list[tuple[float, float]]] = []
    for pos, h in pts:
        if groups and pos - groups[-1][-1][0] <= merge_mm:
            groups[-1].append((pos, h))
        else:
            groups.append([(pos, h)])
    out = []
    for group in groups:
        start, end = group[0][0], group[-1][0]
        h = float(np.median([gh for _, gh in group]))
        # An object reaching the camera plane blacks out everything behind
        # it; capping the denominator keeps the magnification finite.
        mag = h_cam_mm / max(h_cam_mm - h, 1.0)
        out.append(ObjectEvidence(
            start_mm=start,
            end_mm=end,
            h_obj_mm=h,
            shadow_start_mm=min(start, start * mag),
            shadow_end_mm=max(end, end * mag),
        ))
    return out


def _max_uncovered_mm(a_mm: float, b_mm: float, spans: list[tuple[float, float]]) -> float:
    """Longest stretch of [a, b] left uncovered by the union of spans."""
    worst = 0.0
    cursor = a_mm
    for s, e in sorted(spans):
        if s > cursor:
            worst = max(worst, s - cursor)
        cursor = max(cursor, e)
        if cursor >= b_mm:
            return worst
    return max(worst, b_mm - cursor)


def continuity_check(
    profile: StripeProfile,
    gap_threshold_mm: float = 5.0,
    coverage: np.ndarray | None = None,
    evidence: Sequence[ObjectEvidence] | None = None,
    slack_mm: float = 3.0,
) -> ContinuityReport:
    """Find stripe gaps and decide whether the cutoff trigger fires.

    Gaps are maximal runs of covered columns whose stripe left the baseline
    band, reported cell edge to cell edge so a run of k columns has length
    k * pitch.  A three-dimensional occluder darkens more stripe than its
    own extent: besides blocking the sheet over its span it hides lit floor
    behind it from the oblique camera, sometimes as a separate dark region.
    A run that lies within the shadow reach of the supplied evidence
    clusters (allowing slack_mm of uncovered margin for band-edge fuzz) is
    therefore reported as those clusters' measured spans instead of the raw
    run; a run no cluster accounts for keeps its full extent, erring toward
    wider gaps.  The trigger fires when the longest gap reaches the
    threshold.  A frame with no stripe anywhere inside coverage and no
    evidence triggers unconditionally with a single full-length gap and the
    no_stripe flag.
    """
    if gap_threshold_mm <= 0:
        raise ValueError(f"gap_threshold_mm must be positive, got {gap_threshold_mm}")
    if coverage is None:
        coverage = np.ones(profile.n_columns, dtype=bool)
    if coverage.shape != profile.present.shape:
        raise PipelineError("coverage length does not match profile")
    ys = profile.col_coords()
    half = profile.pitch_mm / 2.0
    covered_idx = np.flatnonzero(coverage)
    if covered_idx.size == 0:
        return ContinuityReport(triggered=False, max_gap_mm=0.0, gaps=[], no_stripe=False)
    evidence = list(evidence or ())
    if not profile.present[covered_idx].any() and not evidence:
        gap = Gap(float(ys[covered_idx[0]] - half), float(ys[covered_idx[-1]] + half))
        return ContinuityReport(
            triggered=True, max_gap_mm=gap.length_mm, gaps=[gap], no_stripe=True
        )
    runs: list[tuple[float, float]] = []
    run_start = None
    for j in range(profile.n_columns):
        is_gap_col = coverage[j] and not profile.present[j]
        if is_gap_col and run_start is None:
            run_start = j
        elif not is_gap_col and run_start is not None:
            runs.append((float(ys[run_start] - half), float(ys[j - 1] + half)))
            run_start = None
    if run_start is not None:
        runs.append((float(ys[run_start] - half), float(ys[profile.n_columns - 1] + half)))
    gaps: list[Gap] = []
    explained: set[int] = set()
    for a_mm, b_mm in runs:
        hits = [
            k for k, ev in enumerate(evidence)
            if ev.shadow_end_mm > a_mm and ev.shadow_start_mm < b_mm
        ]
        spans = [(evidence[k].shadow_start_mm, evidence[k].shadow_end_mm) for k in hits]
        if hits and _max_uncovered_mm(a_mm, b_mm, spans) <= slack_mm:
            explained.update(hits)
        else:
            gaps.append(Gap(a_mm, b_mm))
    for k in sorted(explained):
        gaps.append(Gap(evidence[k].start_mm, evidence[k].end_mm))
    gaps.sort(key=lambda g: g.start_mm)
    max_gap = max((g.length_mm for g in gaps), default=0.0)
    return ContinuityReport(
        triggered=max_gap >= gap_threshold_mm, max_gap_mm=float(max_gap), gaps=gaps
    )


def _pixel_of_floor_point(calib: CalibrationData, x_mm, y_mm):
    """Map floor coordinates back to original image pixels (vectorized)."""
    Hinv = np.linalg.inv(calib.homography)
    pts = np.stack([np.asarray(x_mm, float), np.asarray(y_mm, float), np.ones_like(np.asarray(x_mm, float))])
    uvw = Hinv @ pts.reshape(3, -1)
    return uvw[0] / uvw[2], uvw[1] / uvw[2]


def measure_displacement(
    baseline: StripeProfile,
    observed: StripeProfile,
    calib: CalibrationData | None = None,
    noise_floor_mm: float | None = None,
) -> DisplacementResult:
    """Per-column stripe displacement against the baseline, with heights.

    Displacement is baseline center minus observed center (positive when
    the stripe moved toward the robot).  Columns whose magnitude exceeds
    the noise floor (default: twice the standard deviation of the baseline
    centers, but never below one cell) form the disturbed set.  When a
    calibration is supplied each disturbed column is mapped back to image
    pixels, paired with the corner reference in the same column, and pushed
    through the parallax closed form.
    """
    if baseline.geometry_key() != observed.geometry_key():
        raise PipelineError("baseline and observed profiles have different geometry")
    both = baseline.present & observed.present
    disp = np.where(both, baseline.center_mm - observed.center_mm, np.nan)
    if noise_floor_mm is None:
        centers = baseline.center_mm[baseline.present]
        spread = float(np.std(centers)) if centers.size else 0.0
        noise_floor_mm = max(2.0 * spread, baseline.mm_per_cell)
    disturbed = both & (np.abs(np.where(both, disp, 0.0)) > noise_floor_mm)
    result = DisplacementResult(
        y_mm=baseline.col_coords(),
        displacement_mm=disp,
        disturbed=disturbed,
        noise_floor_mm=float(noise_floor_mm),
        footprint=np.zeros(baseline.n_columns, dtype=bool),
    )
    if calib is None or not disturbed.any():
        return result
    idx = np.flatnonzero(disturbed)
    ys = result.y_mm[idx]
    obs_u, _ = _pixel_of_floor_point(calib, observed.center_mm[idx], ys)
    corner_u, _ = _pixel_of_floor_point(calib, np.zeros_like(ys), ys)
    cx = calib.intrinsics.cx
    h_cam = calib.rig.h_cam_mm
    y0 = baseline.y0_mm
    pitch = baseline.pitch_mm
    for j, u_obj, u_corner in zip(idx, obs_u, corner_u):
        x_obj = u_obj - cx
        x_corner = u_corner - cx
        if x_corner < x_obj:
            # Outward displacement (camera below the emitter): the closed
            # form still applies with the raw coordinates.
            obs = None
        else:
            obs = StripeObservation(x_corner=x_corner, x_obj=x_obj)
        phi = parallax_angle(x_corner, x_obj, calib.intrinsics.f_x)
        try:
            est = height_from_parallax(phi, calib.rig)
        except ValueError:
            est = HeightEstimate(h_obj_mm=math.nan, d_obj_mm=math.nan, phi_1_rad=phi, valid=False)
        pos = float(result.y_mm[j])
        if est.valid:
            pos *= (h_cam - est.h_obj_mm) / h_cam
        col = int(round((pos - y0) / pitch))
        if 0 <= col < baseline.n_columns:
            result.footprint[col] = True
        result.observations.append((int(j), obs))
        result.heights.append(
            HeightReading(
                pos_mm=pos,
                h_obj_mm=float(est.h_obj_mm),
                valid=bool(est.valid),
            )
        )
    return result


@dataclass
class PipelineConfig:
    """Tunable knobs for the stripe pipeline.

    The percentile fields adapt the saturation/value minima to each frame:
    the effective minimum is max(absolute floor, per-frame percentile).
    """

    hue_lo: float = 350.0
    hue_hi: float = 10.0
    sat_pct: float = 60.0
    val_pct: float = 60.0
    sat_min: float = 0.35
    val_min: float = 0.20
    morph_radius: int = 1
    window_mm: float = 5.0
    temporal_frames: int = 3
    gap_threshold_mm: float = 5.0
    band_mm: float = 5.0
    # The rectified stripe is wider than band_mm: blurred flanks plus
    # nearest-pixel sampling smear reach a few mm past the band near the
    # image edges.  Cells between band_mm and halo_mm belong to neither
    # view; displacements smaller than halo_mm (object tops below roughly
    # 10 mm at the default rig) are indistinguishable from the resting
    # stripe.  Must be >= band_mm.
    halo_mm: float = 8.0
    clutter_mm: float | None = 150.0
    grid: RectifyGrid = field(default_factory=RectifyGrid)

    _EXTRA_KEYS = (
        "hue_lo", "hue_hi", "sat_pct", "val_pct", "sat_min", "val_min",
        "morph_radius", "window_mm", "temporal_frames", "gap_threshold_mm",
        "band_mm", "halo_mm", "clutter_mm",
    )

    @classmethod
    def from_calibration(cls, calib: CalibrationData) -> "PipelineConfig":
        """Build a config from the free-form keys of a calibration file."""
        kwargs = {}
        for key in cls._EXTRA_KEYS:
            if key in calib.extras:
                kwargs[key] = calib.extras[key]
        if "grid" in calib.extras:
            g = calib.extras["grid"]
            kwargs["grid"] = RectifyGrid(
                x0_mm=float(g["x0_mm"]), x1_mm=float(g["x1_mm"]),
                y0_mm=float(g["y0_mm"]), y1_mm=float(g["y1_mm"]),
                pitch_mm=float(g.get("pitch_mm", 1.0)),
            )
        return cls(**kwargs)

    def to_extras(self) -> dict:
        out = {key: getattr(self, key) for key in self._EXTRA_KEYS}
        out["grid"] = {
            "x0_mm": self.grid.x0_mm, "x1_mm": self.grid.x1_mm,
            "y0_mm": self.grid.y0_mm, "y1_mm": self.grid.y1_mm,
            "pitch_mm": self.grid.pitch_mm,
        }
        return out


class StripePipeline:
    """Stateful frame processor: calibrate on empty frames, then process.

    The baseline profile captured during calibration defines the stripe's
    resting position, the covered columns, and the measurement noise floor.
    Each processed frame yields a PerceptionEvent; any stage failure is
    converted into a fail-safe triggered event instead of propagating.
    """

    def __init__(
        self,
        calib: CalibrationData,
        config: PipelineConfig | None = None,
        baseline: StripeProfile | None = None,
    ):
        self.calib = calib
        self.config = config or PipelineConfig.from_calibration(calib)
        self.baseline = None
        self._map = _RectifyMap(
            calib.homography,
            self.config.grid,
            (calib.intrinsics.height, calib.intrinsics.width),
        )
        self._band_state = TemporalState(
            window=self.config.temporal_frames, prior_present=True
        )
        self._disp_state = TemporalState(window=self.config.temporal_frames)
        self._line_coeffs: tuple[float, float] | None = None
        self._row_coords = self.config.grid.row_coords()
        if baseline is not None:
            self._adopt_baseline(baseline)

    # -- stage helpers -------------------------------------------------

    def _adaptive_threshold(self, hsv: np.ndarray) -> HsvThreshold:
        cfg = self.config
        s = hsv[::_PERCENTILE_STRIDE, ::_PERCENTILE_STRIDE, 1]
        v = hsv[::_PERCENTILE_STRIDE, ::_PERCENTILE_STRIDE, 2]
        sat_min = max(cfg.sat_min, float(np.percentile(s, cfg.sat_pct)))
        val_min = max(cfg.val_min, float(np.percentile(v, cfg.val_pct)))
        return HsvThreshold(cfg.hue_lo, cfg.hue_hi, min(sat_min, 1.0), min(val_min, 1.0))

    def _mask_view(self, frame: Frame) -> RectifiedView:
        intr = self.calib.intrinsics
        if frame.pixels.shape[:2] != (intr.height, intr.width):
            raise PipelineError(
                f"frame is {frame.pixels.shape[1]}x{frame.pixels.shape[0]}, "
                f"calibration expects {intr.width}x{intr.height}"
            )
        hsv = rgb_to_hsv(frame.pixels)
        thr = self._adaptive_threshold(hsv)
        mask = threshold_stripe(hsv, thr)
        mask = morph_open(mask, self.config.morph_radius)
        data = self._map.sample_nearest(mask) & self._map.valid
        return RectifiedView(data=data, valid=self._map.valid, grid=self.config.grid)

    def _reference_line(self, col_idx: np.ndarray) -> np.ndarray:
        """Expected stripe row position (mm) per column, from the baseline fit."""
        if self._line_coeffs is None:
            raise PipelineError("pipeline has no baseline; call calibrate() first")
        a, b = self._line_coeffs
        ys = self.config.grid.y0_mm + col_idx * self.config.grid.pitch_mm
        return a * ys + b

    def _split_bands(self, view: RectifiedView):
        cfg = self.config
        cols = np.arange(cfg.grid.n_cols)
        ref = np.where(
            self.baseline.present,
            np.nan_to_num(self.baseline.center_mm, nan=0.0),
            self._reference_line(cols),
        )
        dist = np.abs(self._row_coords[:, None] - ref[None, :])
        in_band = view.data & (dist <= cfg.band_mm)
        out_band = view.data & (dist > max(cfg.halo_mm, cfg.band_mm))
        if cfg.clutter_mm is not None:
            out_band &= dist <= cfg.clutter_mm
        band_view = RectifiedView(data=in_band, valid=view.valid, grid=cfg.grid)
        disp_view = RectifiedView(data=out_band, valid=view.valid, grid=cfg.grid)
        return band_view, disp_view

    # -- public API ----------------------------------------------------

    def calibrate(self, frames: Iterable[Frame]) -> StripeProfile:
        """Capture the baseline profile from empty-scene frames.

        Each frame is thresholded and rectified, clutter is rejected around
        the dominant stripe line, and the per-frame profiles are averaged:
        presence by majority, center and width by mean over present frames.
        """
        profiles = []
        for frame in frames:
            view = self._mask_view(frame)
            line = hough_dominant_line(view.data, max_points=_HOUGH_MAX_POINTS)
            if self.config.clutter_mm is not None:
                rows, cols = np.nonzero(view.data)
                keep = line.distance(cols, rows) * self.config.grid.pitch_mm <= self.config.clutter_mm
                cleaned = np.zeros_like(view.data)
                cleaned[rows[keep], cols[keep]] = True
                view = RectifiedView(data=cleaned, valid=view.valid, grid=view.grid)
            profiles.append(extract_profile(view))
        if not profiles:
            raise PipelineError("calibrate() needs at least one frame")
        stack = np.stack([p.present for p in profiles])
        counts = stack.sum(axis=0)
        present = counts * 2 > len(profiles)
        centers = np.stack([np.where(p.present, p.center_mm, 0.0) for p in profiles])
        widths = np.stack([np.where(p.present, p.width_mm, 0.0) for p in profiles])
        safe = np.where(counts > 0, counts, 1)
        baseline = StripeProfile(
            y0_mm=self.config.grid.y0_mm,
            pitch_mm=self.config.grid.pitch_mm,
            mm_per_cell=self.config.grid.pitch_mm,
            present=present,
            center_mm=np.where(present, centers.sum(axis=0) / safe, np.nan),
            width_mm=np.where(present, widths.sum(axis=0) / safe, 0.0),
        )
        if not present.any():
            raise PipelineError("calibration frames contain no stripe")
        self._adopt_baseline(baseline)
        return baseline

    def _adopt_baseline(self, baseline: StripeProfile) -> None:
        """Install a baseline and derive its fit line and noise floor."""
        expected = (
            self.config.grid.y0_mm, self.config.grid.pitch_mm,
            self.config.grid.pitch_mm, self.config.grid.n_cols,
        )
        if baseline.geometry_key() != expected:
            raise PipelineError(
                f"baseline geometry {baseline.geometry_key()} does not match "
                f"the configured grid {expected}"
            )
        if not baseline.present.any():
            raise PipelineError("baseline profile contains no stripe")
        ys = baseline.col_coords()[baseline.present]
        cs = baseline.center_mm[baseline.present]
        a, b = np.polyfit(ys, cs, 1) if ys.size > 1 else (0.0, float(cs[0]))
        self._line_coeffs = (float(a), float(b))
        self.baseline = baseline
        self.noise_floor_mm = max(2.0 * float(np.std(cs)), baseline.mm_per_cell)

    def process(self, frame: Frame) -> PerceptionEvent:
        """Run the full pipeline on one frame, never raising mid-stream."""
        try:
            return self._process_inner(frame)
        except Exception as exc:  # fail safe: any stage error stops the robot
            logger.exception("pipeline stage failed at ts=%s", frame.ts_ms)
            span = self.config.grid.y1_mm - self.config.grid.y0_mm
            return PerceptionEvent(
                ts_ms=frame.ts_ms,
                triggered=True,
                max_gap_mm=float(span),
                gaps=[Gap(self.config.grid.y0_mm, self.config.grid.y1_mm)],
                heights=[],
                no_stripe=True,
                error=str(exc),
            )

    def _process_inner(self, frame: Frame) -> PerceptionEvent:
        if self.baseline is None:
            raise PipelineError("pipeline has no baseline; call calibrate() first")
        view = self._mask_view(frame)
        band_view, disp_view = self._split_bands(view)
        band_profile = spatial_denoise(extract_profile(band_view), self.config.window_mm)
        disp_profile = spatial_denoise(extract_profile(disp_view), self.config.window_mm)
        self._band_state, band_fused = temporal_denoise(self._band_state, band_profile)
        self._disp_state, disp_fused = temporal_denoise(self._disp_state, disp_profile)
        disp = measure_displacement(
            self.baseline, disp_fused, self.calib, self.noise_floor_mm
        )
        evidence = cluster_evidence(disp.heights, self.calib.rig.h_cam_mm)
        report = continuity_check(
            band_fused,
            self.config.gap_threshold_mm,
            coverage=self.baseline.present,
            evidence=evidence,
        )
        return PerceptionEvent(
            ts_ms=frame.ts_ms,
            triggered=report.triggered,
            max_gap_mm=report.max_gap_mm,
            gaps=report.gaps,
            heights=disp.heights,
            no_stripe=report.no_stripe,
        )

    def reset_temporal(self) -> None:
        self._band_state = TemporalState(
            window=self.config.temporal_frames, prior_present=True
        )
        self._disp_state = TemporalState(window=self.config.temporal_frames)


def process_frame(pipeline: StripePipeline, frame: Frame) -> tuple[StripePipeline, PerceptionEvent]:
    """Functional wrapper around StripePipeline.process."""
    return pipeline, pipeline.process(frame)


def profile_to_dict(profile: StripeProfile) -> dict:
    """JSON form of a stripe profile; NaN centers become null."""
    center = [None if math.isnan(c) else float(c) for c in profile.center_mm]
    return {
        "y0_mm": profile.y0_mm,
        "pitch_mm": profile.pitch_mm,
        "mm_per_cell": profile.mm_per_cell,
        "present": [bool(p) for p in profile.present],
        "center_mm": center,
        "width_mm": [float(w) for w in profile.width_mm],
    }


def profile_from_dict(raw: dict) -> StripeProfile:
    center = np.array(
        [np.nan if c is None else float(c) for c in raw["center_mm"]], dtype=np.float64
    )
    return StripeProfile(
        y0_mm=float(raw["y0_mm"]),
        pitch_mm=float(raw["pitch_mm"]),
        mm_per_cell=float(raw["mm_per_cell"]),
        present=np.asarray(raw["present"], dtype=bool),
        center_mm=center,
        width_mm=np.asarray(raw["width_mm"], dtype=np.float64),
    )


def event_to_dict(event: PerceptionEvent) -> dict:
    out = {
        "ts_ms": event.ts_ms,
        "triggered": bool(event.triggered),
        "max_gap_mm": float(event.max_gap_mm),
        "gaps": [{"start_mm": g.start_mm, "end_mm": g.end_mm} for g in event.gaps],
        "heights": [
            {"pos_mm": h.pos_mm, "h_obj_mm": h.h_obj_mm, "valid": h.valid}
            for h in event.heights
        ],
        "no_stripe": bool(event.no_stripe),
    }
    if event.error is not None:
        out["error"] = event.error
    return out


def write_events_jsonl(events: Sequence[PerceptionEvent], fp) -> None:
    """Write events as JSON lines to an open text file."""
    for event in events:
        fp.write(json.dumps(event_to_dict(event)) + "\n")
