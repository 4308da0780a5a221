"""Synthetic camera for the stripe rig.

The world frame is millimetres: x runs outward from the mast into the
monitored zone, y transversely, z up.  The laser emitter sits on the mast
at (0, *, h_light) and throws a sheet whose rays travel in x-z planes,
reaching the floor at x = d_light; blur growth along the stripe models the
line generator's divergence.  The camera sits on the same mast, pitched
from nadir toward the zone, so image u decreases with world x and the
floor corner below the mast appears at a larger u than the resting stripe.

Rendering is plain ray casting: floor plane plus axis-aligned boxes, flat
face shading, the stripe alpha-composited on whichever surface its sheet
reaches first at each y, then a lighting preset and sensor noise.  Every
render also yields analytic ground truth (per-column stripe position and
surface height, plus the stripe's pixel stencil) so the perception stack
can be scored without hardware.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .geometry import (
    CalibrationData,
    CameraIntrinsics,
    RigGeometry,
    estimate_homography,
)
from .lighting import LIGHTING_MODES, lighting_field
from .stripe import Frame, PipelineConfig

logger = logging.getLogger(__name__)

__all__ = [
    "SimulationError",
    "Obstacle",
    "CameraPose",
    "SceneSpec",
    "RigSetup",
    "GroundTruth",
    "ObstacleWindow",
    "SweepSample",
    "DEFAULT_SETUP",
    "STRIPE_RGB",
    "render",
    "render_sequence",
    "placement_sweep",
    "make_calibration",
    "project_point",
    "stencil_row_centroids",
    "obstacle_from_dict",
    "scene_to_dict",
    "scene_from_dict",
    "save_scene",
    "load_scene",
    "setup_to_dict",
    "setup_from_dict",
    "save_ground_truth",
    "load_ground_truth",
]

# Stripe color before compositing (a red line laser on an RGB sensor).
STRIPE_RGB = (255.0, 36.0, 28.0)

_FACE_FLOOR = 0
_FACE_SIDE_X = 1
_FACE_SIDE_Y = 2
_FACE_TOP = 3

_FACE_SHADE = {_FACE_FLOOR: 1.0, _FACE_SIDE_X: 0.8, _FACE_SIDE_Y: 0.65, _FACE_TOP: 1.0}

# Stripe dimming and blur growth on reflective surfaces.
_REFLECT_GAIN_LOSS = 0.45
_REFLECT_BLUR_GAIN = 1.5


class SimulationError(RuntimeError):
    """Raised for scenes the renderer cannot represent."""


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned box resting on the floor.

    x_mm is the face nearest the mast, y_mm the lower transverse edge;
    depth extends outward (+x), width transversely (+y).
    """

    x_mm: float
    y_mm: float
    width_mm: float
    depth_mm: float
    height_mm: float
    reflectivity: float = 0.0
    color: tuple = (90, 90, 100)

    def __post_init__(self):
        for name in ("width_mm", "depth_mm", "height_mm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ValueError(f"reflectivity must be in [0, 1], got {self.reflectivity}")

    @property
    def x1_mm(self) -> float:
        return self.x_mm + self.depth_mm

    @property
    def y1_mm(self) -> float:
        return self.y_mm + self.width_mm


@dataclass(frozen=True)
class CameraPose:
    """Camera position and pitch; tilt_deg is measured from straight down."""

    x_mm: float = 0.0
    y_mm: float = 0.0
    z_mm: float = 400.0
    tilt_deg: float = 20.0

    def __post_init__(self):
        if self.z_mm <= 0:
            raise ValueError(f"z_mm must be positive, got {self.z_mm}")
        if not 0.0 <= self.tilt_deg < 90.0:
            raise ValueError(f"tilt_deg must be in [0, 90), got {self.tilt_deg}")


@dataclass(frozen=True)
class SceneSpec:
    """Scene content: obstacles, floor appearance, stripe and sensor knobs."""

    obstacles: tuple = ()
    floor_color: tuple = (120, 118, 115)
    floor_texture_amp: float = 4.0
    lighting: str = "regular"
    noise_std: float = 0.0
    stripe_width_mm: float = 6.0
    stripe_blur_mm_per_m: float = 2.0
    stripe_peak: float = 1.0
    laser_source_y_mm: float = -250.0
    zone_y_mm: tuple = (-250.0, 250.0)
    zone_pitch_mm: float = 1.0
    texture_seed: int = 0

    def __post_init__(self):
        if self.lighting not in LIGHTING_MODES:
            raise ValueError(
                f"lighting must be one of {LIGHTING_MODES}, got {self.lighting!r}"
            )
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.stripe_width_mm <= 0 or self.zone_pitch_mm <= 0:
            raise ValueError("stripe_width_mm and zone_pitch_mm must be positive")
        if self.zone_y_mm[1] <= self.zone_y_mm[0]:
            raise ValueError(f"zone_y_mm must be increasing, got {self.zone_y_mm}")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def zone_columns(self) -> np.ndarray:
        y0, y1 = self.zone_y_mm
        n = int(round((y1 - y0) / self.zone_pitch_mm)) + 1
        return y0 + np.arange(n) * self.zone_pitch_mm


@dataclass(frozen=True)
class RigSetup:
    """Camera plus laser mounting, everything the renderer needs besides scene."""

    camera: CameraPose = CameraPose()
    # Wide lens: the camera must see not just the floor zone but also the
    # laser stripe riding on object tops, whose floor-plane projection is
    # magnified by h_cam / (h_cam - h) toward the image edges.
    intrinsics: CameraIntrinsics = CameraIntrinsics(
        f_x=470.0, cx=576.0, cy=324.0, width=1152, height=648
    )
    h_light_mm: float = 200.0
    d_light_mm: float = 300.0

    def __post_init__(self):
        if self.h_light_mm <= 0 or self.d_light_mm <= 0:
            raise ValueError("h_light_mm and d_light_mm must be positive")

    def rig_geometry(self) -> RigGeometry:
        if self.camera.x_mm != 0.0 or self.camera.y_mm != 0.0:
            logger.warning(
                "camera offset (%.1f, %.1f) mm from the mast: the parallax "
                "closed form assumes the camera is directly above the corner",
                self.camera.x_mm,
                self.camera.y_mm,
            )
        return RigGeometry(
            h_cam_mm=self.camera.z_mm,
            h_light_mm=self.h_light_mm,
            d_light_mm=self.d_light_mm,
        )


DEFAULT_SETUP = RigSetup()


@dataclass
class GroundTruth:
    """Analytic truth for one rendered frame.

    Column arrays are sampled across the monitored zone; stripe_x_mm and
    surface_height_mm locate the sheet's first intersection per column.
    The stencil marks image pixels within two blur sigmas of the sheet on
    the surface that owns the stripe there; it depends only on geometry,
    never on noise, lighting, or texture.
    """

    columns_y_mm: np.ndarray
    stripe_x_mm: np.ndarray
    surface_height_mm: np.ndarray
    occluded: np.ndarray
    occluded_intervals: list
    stencil: np.ndarray | None = None


@dataclass(frozen=True)
class ObstacleWindow:
    """An obstacle present for frames start <= i < stop of a sequence."""

    obstacle: Obstacle
    start: int
    stop: int

    def __post_init__(self):
        if self.stop <= self.start:
            raise ValueError(f"stop must exceed start, got [{self.start}, {self.stop})")


@dataclass(frozen=True)
class SweepSample:
    """One camera height in a placement sweep, measured off rendered images."""

    h_cam_mm: float
    mean_shift_px: float
    spread_px: float
    rectified_shift_mm: float
    n_rows: int


def _camera_axes(tilt_deg: float) -> np.ndarray:
    t = math.radians(tilt_deg)
    x_c = np.array([-math.cos(t), 0.0, -math.sin(t)])
    y_c = np.array([0.0, 1.0, 0.0])
    z_c = np.array([math.sin(t), 0.0, -math.cos(t)])
    return np.stack([x_c, y_c, z_c])


@lru_cache(maxsize=8)
def _pixel_rays(pose: CameraPose, intr: CameraIntrinsics) -> np.ndarray:
    """Unnormalized world-space ray direction per pixel, shape (H, W, 3)."""
    axes = _camera_axes(pose.tilt_deg)
    u_n = (np.arange(intr.width) - intr.cx) / intr.f_x
    v_n = (np.arange(intr.height) - intr.cy) / intr.f_x
    dirs = (
        u_n[None, :, None] * axes[0][None, None, :]
        + v_n[:, None, None] * axes[1][None, None, :]
        + axes[2][None, None, :]
    )
    return dirs.astype(np.float32)


@lru_cache(maxsize=8)
def _floor_cast(pose: CameraPose, intr: CameraIntrinsics):
    """Floor-only hit fields, shared by every scene rendered from this rig.

    The returned arrays are reused across renders and must not be mutated.
    """
    origin = np.array([pose.x_mm, pose.y_mm, pose.z_mm], dtype=np.float32)
    dirs = _pixel_rays(pose, intr)
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(dz < -1e-12, -origin[2] / dz, np.float32(np.inf))
    valid = np.isfinite(t_floor)
    t_safe = np.where(valid, t_floor, 0.0).astype(np.float32)
    points = origin[None, None, :] + t_safe[..., None] * dirs
    obj = np.where(valid, -1, -2).astype(np.int32)
    face = np.full(t_floor.shape, _FACE_FLOOR, dtype=np.int8)
    return t_floor, points, obj, face, valid


@lru_cache(maxsize=8)
def _floor_texture(texture_seed: int, shape: tuple, amp: float) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(texture_seed))
    return rng.uniform(-amp, amp, shape).astype(np.float32)


def _box_pixel_bbox(setup: RigSetup, box: Obstacle):
    """Conservative pixel window covering a box, or None when out of view.

    Central projection keeps a convex body's silhouette inside the hull of
    its projected vertices, so the corner bounds padded by a pixel suffice.
    Falls back to the full image if any corner reaches behind the camera.
    """
    intr = setup.intrinsics
    full = (0, intr.height, 0, intr.width)
    us, vs = [], []
    for x in (box.x_mm, box.x1_mm):
        for y in (box.y_mm, box.y1_mm):
            for z in (0.0, box.height_mm):
                try:
                    u, v = project_point(setup, (x, y, z))
                except SimulationError:
                    return full
                us.append(u)
                vs.append(v)
    c0 = int(math.floor(min(us))) - 2
    c1 = int(math.ceil(max(us))) + 3
    r0 = int(math.floor(min(vs))) - 2
    r1 = int(math.ceil(max(vs))) + 3
    if c1 <= 0 or r1 <= 0 or c0 >= intr.width or r0 >= intr.height:
        return None
    return max(r0, 0), min(r1, intr.height), max(c0, 0), min(c1, intr.width)


def project_point(setup: RigSetup, point) -> tuple[float, float]:
    """World point (x, y, z) mm to pixel (u, v); raises if behind the camera."""
    axes = _camera_axes(setup.camera.tilt_deg)
    c = np.array([setup.camera.x_mm, setup.camera.y_mm, setup.camera.z_mm])
    d = np.asarray(point, float) - c
    depth = float(axes[2] @ d)
    if depth <= 1e-9:
        raise SimulationError(f"point {tuple(point)} is behind the camera")
    u = setup.intrinsics.cx + setup.intrinsics.f_x * float(axes[0] @ d) / depth
    v = setup.intrinsics.cy + setup.intrinsics.f_x * float(axes[1] @ d) / depth
    return u, v


def _sheet_z_at(x, h_light: float, d_light: float):
    return h_light * (1.0 - np.asarray(x, float) / d_light)


def _sheet_owner(scene: SceneSpec, setup: RigSetup, ys: np.ndarray):
    """First surface the laser sheet reaches at each transverse position.

    Returns (owner, face, sx, sz): obstacle index (-1 for floor), face code,
    and the stripe point's x and z.  Ownership goes to the smallest hit x;
    exact ties go to the earlier obstacle.
    """
    ys = np.asarray(ys, float)
    h_light, d_light = setup.h_light_mm, setup.d_light_mm
    owner = np.full(ys.shape, -1, dtype=np.int32)
    face = np.full(ys.shape, _FACE_FLOOR, dtype=np.int8)
    sx = np.full(ys.shape, d_light, dtype=float)
    sz = np.zeros(ys.shape, dtype=float)
    best_x = np.full(ys.shape, d_light, dtype=float)
    for i, box in enumerate(scene.obstacles):
        if box.x_mm <= 0:
            raise SimulationError(
                f"obstacle {i} near face at x={box.x_mm} mm crosses the mast plane"
            )
        z_enter = float(_sheet_z_at(box.x_mm, h_light, d_light))
        x_top = d_light * (1.0 - box.height_mm / h_light)
        if 0.0 <= z_enter <= box.height_mm:
            hit_x, hit_face, hit_z = box.x_mm, _FACE_SIDE_X, z_enter
        elif z_enter > box.height_mm and box.x_mm <= x_top <= box.x1_mm:
            hit_x, hit_face, hit_z = x_top, _FACE_TOP, box.height_mm
        else:
            continue
        cover = (ys >= box.y_mm) & (ys < box.y1_mm)
        upd = cover & (hit_x < best_x)
        owner[upd] = i
        face[upd] = hit_face
        sx[upd] = hit_x
        sz[upd] = hit_z
        best_x[upd] = hit_x
    return owner, face, sx, sz


def _cast_scene(scene: SceneSpec, setup: RigSetup):
    """Ray cast floor and boxes; returns hit fields per pixel plus box windows.

    Box tests run only inside each box's projected pixel window, so scenes
    with small obstacles cost little more than the cached floor cast.
    """
    intr, pose = setup.intrinsics, setup.camera
    origin = np.array([pose.x_mm, pose.y_mm, pose.z_mm], dtype=np.float32)
    t_floor, f_points, f_obj, f_face, f_valid = _floor_cast(pose, intr)
    if not scene.obstacles:
        return f_points, f_obj, f_face, f_valid, []
    dirs = _pixel_rays(pose, intr)
    t_best = t_floor.copy()
    points = f_points.copy()
    obj = f_obj.copy()
    face = f_face.copy()
    windows = []
    for i, box in enumerate(scene.obstacles):
        lo = np.array([box.x_mm, box.y_mm, 0.0], dtype=np.float32)
        hi = np.array([box.x1_mm, box.y1_mm, box.height_mm], dtype=np.float32)
        if np.all(origin >= lo) and np.all(origin <= hi):
            raise SimulationError(f"camera is inside obstacle {i}")
        bbox = _box_pixel_bbox(setup, box)
        windows.append(bbox)
        if bbox is None:
            continue
        r0, r1, c0, c1 = bbox
        d = dirs[r0:r1, c0:c1]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[None, None, :] - origin[None, None, :]) / d
            t2 = (hi[None, None, :] - origin[None, None, :]) / d
        t_lo = np.nan_to_num(np.fmin(t1, t2), nan=-np.inf)
        t_hi = np.nan_to_num(np.fmax(t1, t2), nan=np.inf)
        tmin = t_lo.max(axis=-1)
        tmax = t_hi.min(axis=-1)
        hit = (tmax >= tmin) & (tmin > 1e-9) & np.isfinite(tmin)
        closer = hit & (tmin < t_best[r0:r1, c0:c1])
        if not closer.any():
            continue
        axis = t_lo.argmax(axis=-1)
        t_best[r0:r1, c0:c1][closer] = tmin[closer]
        obj[r0:r1, c0:c1][closer] = i
        ax = axis[closer]
        face[r0:r1, c0:c1][closer] = np.where(
            ax == 2, _FACE_TOP, np.where(ax == 0, _FACE_SIDE_X, _FACE_SIDE_Y)
        ).astype(np.int8)
        points[r0:r1, c0:c1][closer] = origin[None, :] + tmin[closer][:, None] * d[closer]
    valid = obj != -2
    return points, obj, face, valid, windows


def _stripe_alpha_and_stencil(scene, setup, points, obj, face, valid):
    """Stripe opacity per pixel plus the 2-sigma ground-truth stencil.

    The Gaussian and ownership tests only run on pixels within four maximal
    sigmas of the sheet plane; beyond that the stripe contributes less than
    a third of an intensity count.
    """
    h_light, d_light = setup.h_light_mm, setup.d_light_mm
    px, py, pz = points[..., 0], points[..., 1], points[..., 2]
    norm = math.hypot(h_light, d_light)
    delta = (h_light * px + d_light * pz - h_light * d_light) * np.float32(1.0 / norm)
    y_span = max(
        abs(float(py.max()) - scene.laser_source_y_mm),
        abs(float(py.min()) - scene.laser_source_y_mm),
    )
    sigma_cap = (scene.stripe_width_mm + scene.stripe_blur_mm_per_m * y_span / 1000.0) / 4.0
    r_max = max((b.reflectivity for b in scene.obstacles), default=0.0)
    sigma_cap *= 1.0 + _REFLECT_BLUR_GAIN * r_max
    cand = valid & (np.abs(delta) <= 4.0 * sigma_cap)
    alpha = np.zeros(delta.shape, dtype=np.float32)
    stencil = np.zeros(delta.shape, dtype=bool)
    if not cand.any():
        return alpha, stencil, cand
    py_c = py[cand].astype(float)
    owner, owner_face, _, _ = _sheet_owner(scene, setup, py_c)
    on_owner = obj[cand] == owner
    side = owner_face == _FACE_SIDE_X
    on_owner &= np.where(side, face[cand] == _FACE_SIDE_X, face[cand] == owner_face)
    sigma = (
        scene.stripe_width_mm
        + scene.stripe_blur_mm_per_m * np.abs(py_c - scene.laser_source_y_mm) / 1000.0
    ) / 4.0
    refl = np.zeros(len(scene.obstacles) + 1)
    for i, box in enumerate(scene.obstacles):
        refl[i] = box.reflectivity
    r = refl[owner]
    sigma_eff = sigma * (1.0 + _REFLECT_BLUR_GAIN * r)
    gain = 1.0 - _REFLECT_GAIN_LOSS * r
    d_c = delta[cand].astype(float)
    a = scene.stripe_peak * gain * np.exp(-0.5 * (d_c / sigma_eff) ** 2)
    a = np.where(on_owner, a, 0.0)
    alpha[cand] = np.clip(a, 0.0, 1.0)
    stencil[cand] = on_owner & (np.abs(d_c) <= 2.0 * sigma_eff)
    return alpha, stencil, cand


def render(
    scene: SceneSpec,
    setup: RigSetup = DEFAULT_SETUP,
    seed=0,
    with_stencil: bool = True,
) -> tuple[np.ndarray, GroundTruth]:
    """Render one frame; returns the uint8 RGB image and its ground truth.

    The seed drives sensor noise only.  Floor texture comes from the
    scene's texture_seed so it stays put across a sequence, and the ground
    truth (including the stencil) is independent of both.
    """
    intr = setup.intrinsics
    points, obj, face, valid, windows = _cast_scene(scene, setup)
    tex = _floor_texture(
        scene.texture_seed, (intr.height, intr.width), scene.floor_texture_amp
    )
    img = np.empty((intr.height, intr.width, 3), dtype=np.float32)
    img[:] = np.asarray(scene.floor_color, np.float32)
    img += tex[..., None]
    shades = np.array(
        [_FACE_SHADE[_FACE_FLOOR], _FACE_SHADE[_FACE_SIDE_X],
         _FACE_SHADE[_FACE_SIDE_Y], _FACE_SHADE[_FACE_TOP]],
        dtype=np.float32,
    )
    for i, box in enumerate(scene.obstacles):
        bbox = windows[i]
        if bbox is None:
            continue
        r0, r1, c0, c1 = bbox
        sel = obj[r0:r1, c0:c1] == i
        if sel.any():
            shade_sel = shades[face[r0:r1, c0:c1][sel]]
            img[r0:r1, c0:c1][sel] = (
                np.asarray(box.color, np.float32)[None, :] * shade_sel[:, None]
            )
    gain, offset = lighting_field((intr.height, intr.width), scene.lighting)
    if np.isscalar(gain):
        if scene.lighting != "regular":
            img = img * np.float32(gain) + np.float32(offset)
    else:
        img = img * gain[..., None] + np.float32(offset)
    alpha, stencil, cand = _stripe_alpha_and_stencil(
        scene, setup, points, obj, face, valid
    )
    a = alpha[cand][:, None]
    img[cand] = img[cand] * (1.0 - a) + a * np.asarray(STRIPE_RGB, np.float32)
    if scene.noise_std > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, scene.noise_std * 255.0, img.shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    ys = scene.zone_columns()
    owner, _, sx, sz = _sheet_owner(scene, setup, ys)
    intervals = []
    pitch = scene.zone_pitch_mm
    for i in range(len(scene.obstacles)):
        runs = np.flatnonzero(owner == i)
        if runs.size == 0:
            continue
        breaks = np.flatnonzero(np.diff(runs) > 1)
        starts = np.concatenate([[0], breaks + 1])
        stops = np.concatenate([breaks, [runs.size - 1]])
        for s, e in zip(starts, stops):
            intervals.append(
                (i, float(ys[runs[s]] - pitch / 2), float(ys[runs[e]] + pitch / 2))
            )
    gt = GroundTruth(
        columns_y_mm=ys,
        stripe_x_mm=sx,
        surface_height_mm=sz,
        occluded=owner >= 0,
        occluded_intervals=intervals,
        stencil=stencil if with_stencil else None,
    )
    return img, gt


def render_sequence(
    scene: SceneSpec,
    n_frames: int,
    seed=0,
    fps: float = 50.0,
    windows: Sequence[ObstacleWindow] = (),
    setup: RigSetup = DEFAULT_SETUP,
    with_stencil: bool = False,
) -> Iterator[tuple[Frame, GroundTruth]]:
    """Render a fixed-camera sequence with obstacles appearing on schedule.

    Per-frame noise seeds are spawned from the sequence seed, so the whole
    sequence is reproducible while frames stay mutually independent.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    children = np.random.SeedSequence(seed).spawn(n_frames)
    for i in range(n_frames):
        extra = tuple(w.obstacle for w in windows if w.start <= i < w.stop)
        scene_i = replace(scene, obstacles=scene.obstacles + extra)
        img, gt = render(scene_i, setup, seed=children[i], with_stencil=with_stencil)
        yield Frame(pixels=img, ts_ms=int(round(i * 1000.0 / fps))), gt


def stencil_row_centroids(stencil: np.ndarray):
    """Per-row centroid of set pixels: (row indices, centroid u per row)."""
    counts = stencil.sum(axis=1)
    rows = np.flatnonzero(counts)
    us = np.arange(stencil.shape[1])
    sums = stencil[rows] @ us
    return rows, sums / counts[rows]


def placement_sweep(
    box: Obstacle,
    camera_heights_mm: Sequence[float],
    setup: RigSetup = DEFAULT_SETUP,
    scene: SceneSpec | None = None,
    seed=0,
) -> list[SweepSample]:
    """Measure stripe pixel shift for one box across camera mounting heights.

    For each height the empty and occupied scenes are rendered and the
    displaced stripe's per-row pixel centroids are compared against the
    resting stripe on the same rows.  mean_shift_px is signed (positive
    when the stripe moves toward the corner, the camera-above-emitter
    case); spread_px is the centroid spread across rows, which stays small
    because a pitched camera shifts every row of the sheet equally; and
    rectified_shift_mm is the displacement after projecting the stripe
    points down to the floor plane, the measure that grows monotonically
    with the camera-emitter height separation.
    """
    base = scene if scene is not None else SceneSpec()
    base = replace(base, obstacles=())
    out = []
    for z in camera_heights_mm:
        su = replace(setup, camera=replace(setup.camera, z_mm=float(z)))
        if z <= box.height_mm:
            raise SimulationError(
                f"camera height {z} mm must exceed the box height {box.height_mm} mm"
            )
        _, gt0 = render(base, su, seed=seed)
        _, gt1 = render(replace(base, obstacles=(box,)), su, seed=seed)
        rows0, cent0 = stencil_row_centroids(gt0.stencil)
        # A pixel row crossing the box top can also cross the lit floor
        # stripe at a different world y, so isolate the displaced segment
        # by removing every resting-stripe pixel first.
        rows1, cent1 = stencil_row_centroids(gt1.stencil & ~gt0.stencil)
        u0 = dict(zip(rows0.tolist(), cent0.tolist()))
        u1 = dict(zip(rows1.tolist(), cent1.tolist()))
        # Rows whose ground-truth stripe sits on the box: project the
        # displaced stripe ends and keep strictly interior rows.
        cols = gt1.columns_y_mm
        on_box = gt1.occluded
        if not on_box.any():
            raise SimulationError("sweep box never intersects the laser sheet")
        sx = float(np.median(gt1.stripe_x_mm[on_box]))
        sz = float(np.median(gt1.surface_height_mm[on_box]))
        y_lo = float(cols[on_box].min())
        y_hi = float(cols[on_box].max())
        _, v_lo = project_point(su, (sx, y_lo, sz))
        _, v_hi = project_point(su, (sx, y_hi, sz))
        r_lo, r_hi = int(math.ceil(min(v_lo, v_hi))) + 2, int(math.floor(max(v_lo, v_hi))) - 2
        shifts = []
        cents = []
        for r in range(r_lo, r_hi + 1):
            if r in u0 and r in u1:
                shifts.append(u1[r] - u0[r])
                cents.append(u1[r])
        if not shifts:
            raise SimulationError(
                f"no usable stripe rows at camera height {z} mm"
            )
        rect = setup.d_light_mm - sx * z / (z - sz)
        out.append(
            SweepSample(
                h_cam_mm=float(z),
                mean_shift_px=float(np.mean(shifts)),
                spread_px=float(np.max(cents) - np.min(cents)),
                rectified_shift_mm=float(rect),
                n_rows=len(shifts),
            )
        )
    return out


def make_calibration(
    setup: RigSetup = DEFAULT_SETUP, config: PipelineConfig | None = None
) -> CalibrationData:
    """Calibration for a rig: floor homography fitted on projected landmarks."""
    xs = (0.0, 175.0, 350.0)
    ys = (-200.0, 0.0, 200.0)
    dst = [(x, y) for x in xs for y in ys]
    src = [project_point(setup, (x, y, 0.0)) for x, y in dst]
    H = estimate_homography(np.asarray(src), np.asarray(dst))
    extras = config.to_extras() if config is not None else {}
    return CalibrationData(
        intrinsics=setup.intrinsics,
        rig=setup.rig_geometry(),
        homography=H,
        extras=extras,
    )


# -- serialization ------------------------------------------------------


def scene_to_dict(scene: SceneSpec) -> dict:
    return {
        "obstacles": [
            {
                "x_mm": b.x_mm,
                "y_mm": b.y_mm,
                "width_mm": b.width_mm,
                "depth_mm": b.depth_mm,
                "height_mm": b.height_mm,
                "reflectivity": b.reflectivity,
                "color": list(b.color),
            }
            for b in scene.obstacles
        ],
        "floor_color": list(scene.floor_color),
        "floor_texture_amp": scene.floor_texture_amp,
        "lighting": scene.lighting,
        "noise_std": scene.noise_std,
        "stripe_width_mm": scene.stripe_width_mm,
        "stripe_blur_mm_per_m": scene.stripe_blur_mm_per_m,
        "stripe_peak": scene.stripe_peak,
        "laser_source_y_mm": scene.laser_source_y_mm,
        "zone_y_mm": list(scene.zone_y_mm),
        "zone_pitch_mm": scene.zone_pitch_mm,
        "texture_seed": scene.texture_seed,
    }


def obstacle_from_dict(raw: dict) -> Obstacle:
    return Obstacle(
        x_mm=float(raw["x_mm"]),
        y_mm=float(raw["y_mm"]),
        width_mm=float(raw["width_mm"]),
        depth_mm=float(raw["depth_mm"]),
        height_mm=float(raw["height_mm"]),
        reflectivity=float(raw.get("reflectivity", 0.0)),
        color=tuple(raw.get("color", (90, 90, 100))),
    )


def scene_from_dict(raw: dict) -> SceneSpec:
    kwargs = dict(raw)
    kwargs.pop("setup", None)
    obstacles = tuple(obstacle_from_dict(b) for b in kwargs.pop("obstacles", []))
    if "floor_color" in kwargs:
        kwargs["floor_color"] = tuple(kwargs["floor_color"])
    if "zone_y_mm" in kwargs:
        kwargs["zone_y_mm"] = tuple(kwargs["zone_y_mm"])
    return SceneSpec(obstacles=obstacles, **kwargs)


def setup_to_dict(setup: RigSetup) -> dict:
    return {
        "camera": {
            "x_mm": setup.camera.x_mm,
            "y_mm": setup.camera.y_mm,
            "z_mm": setup.camera.z_mm,
            "tilt_deg": setup.camera.tilt_deg,
        },
        "intrinsics": {
            "f_x": setup.intrinsics.f_x,
            "cx": setup.intrinsics.cx,
            "cy": setup.intrinsics.cy,
            "width": setup.intrinsics.width,
            "height": setup.intrinsics.height,
        },
        "h_light_mm": setup.h_light_mm,
        "d_light_mm": setup.d_light_mm,
    }


def setup_from_dict(raw: dict) -> RigSetup:
    cam = raw.get("camera", {})
    intr = raw.get("intrinsics", {})
    defaults = RigSetup()
    return RigSetup(
        camera=CameraPose(
            x_mm=float(cam.get("x_mm", 0.0)),
            y_mm=float(cam.get("y_mm", 0.0)),
            z_mm=float(cam.get("z_mm", defaults.camera.z_mm)),
            tilt_deg=float(cam.get("tilt_deg", defaults.camera.tilt_deg)),
        ),
        intrinsics=CameraIntrinsics(
            f_x=float(intr.get("f_x", defaults.intrinsics.f_x)),
            cx=float(intr.get("cx", defaults.intrinsics.cx)),
            cy=float(intr.get("cy", defaults.intrinsics.cy)),
            width=int(intr.get("width", defaults.intrinsics.width)),
            height=int(intr.get("height", defaults.intrinsics.height)),
        ),
        h_light_mm=float(raw.get("h_light_mm", defaults.h_light_mm)),
        d_light_mm=float(raw.get("d_light_mm", defaults.d_light_mm)),
    )


def save_scene(path, scene: SceneSpec, setup: RigSetup | None = None) -> None:
    """Write a scene (optionally with its rig setup) as JSON."""
    raw = scene_to_dict(scene)
    if setup is not None:
        raw["setup"] = setup_to_dict(setup)
    Path(path).write_text(json.dumps(raw, indent=2) + "\n")


def load_scene(path) -> tuple[SceneSpec, RigSetup | None]:
    """Read a scene JSON; returns (scene, setup or None if the file has none)."""
    raw = json.loads(Path(path).read_text())
    setup = setup_from_dict(raw["setup"]) if "setup" in raw else None
    return scene_from_dict(raw), setup


def _rle_encode(mask: np.ndarray) -> list:
    flat = mask.ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    return [
        [int(bounds[k]), int(bounds[k + 1] - bounds[k])]
        for k in range(len(bounds) - 1)
        if flat[bounds[k]]
    ]


def _rle_decode(runs: list, shape) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    for start, length in runs:
        flat[start:start + length] = True
    return flat.reshape(shape)


def save_ground_truth(path, gt: GroundTruth) -> None:
    """Write ground truth as JSON with the stencil run-length encoded."""
    raw = {
        "columns_y_mm": gt.columns_y_mm.tolist(),
        "stripe_x_mm": gt.stripe_x_mm.tolist(),
        "surface_height_mm": gt.surface_height_mm.tolist(),
        "occluded": gt.occluded.astype(int).tolist(),
        "occluded_intervals": [list(iv) for iv in gt.occluded_intervals],
    }
    if gt.stencil is not None:
        raw["stencil"] = {
            "shape": list(gt.stencil.shape),
            "runs": _rle_encode(gt.stencil),
        }
    Path(path).write_text(json.dumps(raw) + "\n")


def load_ground_truth(path) -> GroundTruth:
    raw = json.loads(Path(path).read_text())
    stencil = None
    if "stencil" in raw:
        stencil = _rle_decode(raw["stencil"]["runs"], tuple(raw["stencil"]["shape"]))
    return GroundTruth(
        columns_y_mm=np.asarray(raw["columns_y_mm"], float),
        stripe_x_mm=np.asarray(raw["stripe_x_mm"], float),
        surface_height_mm=np.asarray(raw["surface_height_mm"], float),
        occluded=np.asarray(raw["occluded"], bool),
        occluded_intervals=[tuple(iv) for iv in raw["occluded_intervals"]],
        stencil=stencil,
    )
