"""Synthetic training-image generation by cutout compositing.

Background-removed object cutouts (RGBA, photographed at eight yaw
angles) are pasted onto floor images with randomized count, position,
rotation, scale, and lighting.  Output follows the one-text-file-per-
image annotation convention used by single-stage detectors.  A small
procedural starter set of cutouts and floors lets everything run
without a physical asset corpus.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import cv2
import numpy as np

from .decision import DetectionEvent, ObjectCategory
from .lighting import LIGHTING_MODES, apply_lighting

__all__ = [
    "Annotation",
    "BackgroundAsset",
    "CLASS_NAMES",
    "CUTOUT_ANGLES",
    "CutoutAsset",
    "DatagenError",
    "DatasetConfig",
    "apply_lighting",
    "compose_scene",
    "crop_background",
    "detections_to_events",
    "generate_dataset",
    "load_assets",
    "make_starter_assets",
    "place_cutout",
    "render_dataset_image",
    "validate_annotations",
]

logger = logging.getLogger(__name__)

CUTOUT_ANGLES = (0, 45, 90, 135, 180, 225, 270, 315)

# Detector class list; line number in classes.txt is the class id.
CLASS_NAMES = (
    "human",
    "tools",
    "materials",
    "parts",
    "vehicles",
    "environment",
    "safety_ppe",
)


class DatagenError(RuntimeError):
    """Raised when generation cannot proceed (assets missing, no fit)."""


@dataclass(frozen=True)
class CutoutAsset:
    """One background-removed object photo."""

    object_id: str
    category: str
    image: np.ndarray
    angle_deg: int
    size_hint_mm: float = 100.0

    def __post_init__(self):
        if self.category not in CLASS_NAMES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.angle_deg not in CUTOUT_ANGLES:
            raise ValueError(
                f"capture angle must be one of {CUTOUT_ANGLES}, got {self.angle_deg}"
            )
        img = self.image
        if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 4:
            raise ValueError("cutout image must be (H, W, 4) uint8")
        alpha = img[..., 3]
        if not (alpha > 0).any() or not (alpha == 0).any():
            raise ValueError(
                f"cutout {self.object_id!r} alpha must mix opaque and transparent pixels"
            )


@dataclass(frozen=True)
class BackgroundAsset:
    """A floor crop serving as the composition canvas."""

    image: np.ndarray
    source_id: str
    crop: tuple[int, int, int, int]

    def __post_init__(self):
        img = self.image
        if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("background image must be (H, W, 3) uint8")


@dataclass(frozen=True)
class Annotation:
    """Axis-aligned box in normalized image coordinates."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class id must be >= 0, got {self.class_id}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box size must be positive, got {self.w} x {self.h}")
        for v in (self.cx, self.cy):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"box center must lie in [0, 1], got {v}")
        if self.cx - self.w / 2 < -1e-9 or self.cx + self.w / 2 > 1 + 1e-9:
            raise ValueError("box extends past the left or right edge")
        if self.cy - self.h / 2 < -1e-9 or self.cy + self.h / 2 > 1 + 1e-9:
            raise ValueError("box extends past the top or bottom edge")

    def to_line(self) -> str:
        return (
            f"{self.class_id} {self.cx:.6f} {self.cy:.6f} {self.w:.6f} {self.h:.6f}"
        )

    @classmethod
    def from_line(cls, line: str) -> "Annotation":
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"expected 5 fields, got {len(parts)}: {line!r}")
        return cls(int(parts[0]), *(float(p) for p in parts[1:]))


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 5000
    splits: tuple[int, int, int] = (3500, 500, 1000)
    objects_per_image: tuple[int, int] = (1, 5)
    scale_range: tuple[float, float] = (0.5, 1.5)
    lighting_modes: tuple[str, ...] = LIGHTING_MODES
    categories: tuple[str, ...] = CLASS_NAMES
    image_size: tuple[int, int] = (640, 640)
    max_iou: float = 0.3
    max_retries: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError(f"count must be positive, got {self.count}")
        if sum(self.splits) != self.count:
            raise ValueError(
                f"splits {self.splits} must sum to count {self.count}"
            )
        lo, hi = self.objects_per_image
        if not 0 <= lo <= hi:
            raise ValueError(f"bad objects-per-image range ({lo}, {hi})")
        slo, shi = self.scale_range
        if not 0 < slo <= shi:
            raise ValueError(f"bad scale range ({slo}, {shi})")
        for mode in self.lighting_modes:
            if mode not in LIGHTING_MODES:
                raise ValueError(f"unknown lighting mode {mode!r}")
        if not self.lighting_modes:
            raise ValueError("at least one lighting mode is required")
        for cat in self.categories:
            if cat not in CLASS_NAMES:
                raise ValueError(f"unknown category {cat!r}")
        if not self.categories:
            raise ValueError("at least one category is required")
        if not 0.0 <= self.max_iou <= 1.0:
            raise ValueError(f"max IoU must be in [0, 1], got {self.max_iou}")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError(f"bad image size {self.image_size}")

    def split_of(self, index: int) -> str:
        """Deterministic split by index range: train, then val, then test."""
        if not 0 <= index < self.count:
            raise ValueError(f"index {index} outside [0, {self.count})")
        if index < self.splits[0]:
            return "train"
        if index < self.splits[0] + self.splits[1]:
            return "val"
        return "test"

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "splits": list(self.splits),
            "objects_per_image": list(self.objects_per_image),
            "scale_range": list(self.scale_range),
            "lighting_modes": list(self.lighting_modes),
            "categories": list(self.categories),
            "image_size": list(self.image_size),
            "max_iou": self.max_iou,
            "max_retries": self.max_retries,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DatasetConfig":
        kwargs = {}
        for key in (
            "count", "splits", "objects_per_image", "scale_range",
            "lighting_modes", "categories", "image_size", "max_iou",
            "max_retries", "seed",
        ):
            if key in raw:
                value = raw[key]
                kwargs[key] = tuple(value) if isinstance(value, list) else value
        return cls(**kwargs)


def _transform_cutout(rgba: np.ndarray, angle_deg: float, scale: float) -> np.ndarray:
    """Rotate and scale an RGBA cutout, expanding the canvas to fit."""
    h, w = rgba.shape[:2]
    theta = math.radians(angle_deg)
    new_w = int(math.ceil((abs(math.cos(theta)) * w + abs(math.sin(theta)) * h) * scale))
    new_h = int(math.ceil((abs(math.sin(theta)) * w + abs(math.cos(theta)) * h) * scale))
    new_w, new_h = max(new_w, 1), max(new_h, 1)
    mat = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle_deg, scale)
    mat[0, 2] += new_w / 2.0 - w / 2.0
    mat[1, 2] += new_h / 2.0 - h / 2.0
    return cv2.warpAffine(
        rgba, mat, (new_w, new_h),
        flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )


def _paste(
    canvas: np.ndarray, warped: np.ndarray, x0: int, y0: int
) -> tuple[int, int, int, int] | None:
    """Alpha-blend a warped RGBA patch onto the canvas in place.

    Returns the tight pixel bounds (x0, y0, x1, y1), exclusive on the
    high side, of the blended alpha-positive region, or None when
    nothing opaque lands inside the canvas.
    """
    wh, ww = warped.shape[:2]
    ch, cw = canvas.shape[:2]
    sx0, sy0 = max(0, -x0), max(0, -y0)
    dx0, dy0 = max(0, x0), max(0, y0)
    dx1, dy1 = min(cw, x0 + ww), min(ch, y0 + wh)
    if dx1 <= dx0 or dy1 <= dy0:
        return None
    patch = warped[sy0:sy0 + (dy1 - dy0), sx0:sx0 + (dx1 - dx0)]
    if not (patch[..., 3] > 0).any():
        return None
    alpha = patch[..., 3:4].astype(np.float32) / 255.0
    region = canvas[dy0:dy1, dx0:dx1].astype(np.float32)
    blended = alpha * patch[..., :3].astype(np.float32) + (1.0 - alpha) * region
    canvas[dy0:dy1, dx0:dx1] = np.rint(blended).astype(np.uint8)
    ys, xs = np.nonzero(patch[..., 3])
    return (
        dx0 + int(xs.min()),
        dy0 + int(ys.min()),
        dx0 + int(xs.max()) + 1,
        dy0 + int(ys.max()) + 1,
    )


def place_cutout(
    canvas: np.ndarray,
    rgba: np.ndarray,
    center_xy: tuple[float, float],
    angle_deg: float = 0.0,
    scale: float = 1.0,
) -> tuple[int, int, int, int] | None:
    """Rotate, scale, and alpha-blend a cutout onto the canvas in place.

    Returns the tight pixel bounds of the placed alpha-positive region
    as (x0, y0, x1, y1), exclusive high side, or None when nothing
    opaque lands inside the canvas.
    """
    warped = _transform_cutout(rgba, angle_deg, scale)
    wh, ww = warped.shape[:2]
    x0 = int(round(center_xy[0] - ww / 2.0))
    y0 = int(round(center_xy[1] - wh / 2.0))
    return _paste(canvas, warped, x0, y0)


def _box_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    if ix1 <= ix0 or iy1 <= iy0:
        return 0.0
    inter = (ix1 - ix0) * (iy1 - iy0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / float(area_a + area_b - inter)


def compose_scene(
    bg: BackgroundAsset,
    cutouts: Sequence[CutoutAsset],
    rng: np.random.Generator,
    config: DatasetConfig = DatasetConfig(),
) -> tuple[np.ndarray, list[Annotation], str]:
    """Paste the given cutouts onto the background and relight.

    Every cutout gets a fresh rotation, scale, and position from the
    generator; placements whose tight box overlap with an already
    placed box exceeds the IoU cap, or that would not fit the canvas,
    are resampled up to the retry limit.  Returns the composited image,
    one tight annotation per cutout, and the applied lighting mode.
    """
    canvas = bg.image.copy()
    ch, cw = canvas.shape[:2]
    placed: list[tuple[int, int, int, int]] = []
    annotations: list[Annotation] = []
    class_ids = {name: i for i, name in enumerate(config.categories)}
    for cutout in cutouts:
        if cutout.category not in class_ids:
            raise DatagenError(
                f"cutout category {cutout.category!r} not in configured set"
            )
        bounds = None
        for _ in range(config.max_retries):
            angle = float(rng.uniform(0.0, 360.0))
            scale = float(rng.uniform(*config.scale_range))
            warped = _transform_cutout(cutout.image, angle, scale)
            wh, ww = warped.shape[:2]
            if ww > cw or wh > ch:
                continue
            cx = float(rng.uniform(ww / 2.0, cw - ww / 2.0))
            cy = float(rng.uniform(wh / 2.0, ch - wh / 2.0))
            x0 = int(round(cx - ww / 2.0))
            y0 = int(round(cy - wh / 2.0))
            ys, xs = np.nonzero(warped[..., 3])
            candidate = (
                x0 + int(xs.min()), y0 + int(ys.min()),
                x0 + int(xs.max()) + 1, y0 + int(ys.max()) + 1,
            )
            if any(_box_iou(candidate, p) > config.max_iou for p in placed):
                continue
            bounds = _paste(canvas, warped, x0, y0)
            if bounds is not None:
                break
        if bounds is None:
            raise DatagenError(
                f"could not place cutout {cutout.object_id!r} within "
                f"{config.max_retries} attempts"
            )
        placed.append(bounds)
        x0, y0, x1, y1 = bounds
        annotations.append(
            Annotation(
                class_id=class_ids[cutout.category],
                cx=(x0 + x1) / 2.0 / cw,
                cy=(y0 + y1) / 2.0 / ch,
                w=(x1 - x0) / cw,
                h=(y1 - y0) / ch,
            )
        )
    mode = str(rng.choice(list(config.lighting_modes)))
    return apply_lighting(canvas, mode), annotations, mode


def crop_background(
    image: np.ndarray,
    source_id: str,
    size: tuple[int, int],
    rng: np.random.Generator,
) -> BackgroundAsset:
    """Random crop of a floor image down to the output size."""
    w, h = size
    ih, iw = image.shape[:2]
    if iw < w or ih < h:
        raise DatagenError(
            f"background {source_id!r} is {iw}x{ih}, smaller than output {w}x{h}"
        )
    x0 = int(rng.integers(0, iw - w + 1))
    y0 = int(rng.integers(0, ih - h + 1))
    return BackgroundAsset(
        image=image[y0:y0 + h, x0:x0 + w],
        source_id=source_id,
        crop=(x0, y0, w, h),
    )


# --------------------------------------------------------------------------
# Asset handling


def _read_rgba(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read image: {path}")
    if raw.ndim != 3 or raw.shape[2] != 4:
        raise DatagenError(f"cutout {path} has no alpha channel")
    return cv2.cvtColor(raw, cv2.COLOR_BGRA2RGBA)


def load_assets(
    assets_dir: str | Path, categories: Sequence[str] = CLASS_NAMES
) -> tuple[list[CutoutAsset], list[tuple[str, np.ndarray]]]:
    """Load cutout and background assets from the standard layout.

    Expects ``cutouts/<category>/<id>_<angle>.png`` and
    ``backgrounds/*.png``; fails before any output if a requested
    category has no cutouts or no backgrounds exist.
    """
    assets_dir = Path(assets_dir)
    cutouts: list[CutoutAsset] = []
    for category in categories:
        cat_dir = assets_dir / "cutouts" / category
        files = sorted(cat_dir.glob("*.png")) if cat_dir.is_dir() else []
        if not files:
            raise DatagenError(f"no cutouts found for category {category!r}")
        for path in files:
            stem = path.stem
            if "_" not in stem:
                raise DatagenError(f"cutout name {path.name!r} is not <id>_<angle>.png")
            object_id, _, angle_txt = stem.rpartition("_")
            cutouts.append(
                CutoutAsset(
                    object_id=object_id,
                    category=category,
                    image=_read_rgba(path),
                    angle_deg=int(angle_txt),
                )
            )
    bg_files = sorted((assets_dir / "backgrounds").glob("*.png"))
    if not bg_files:
        raise DatagenError(f"no backgrounds found under {assets_dir}")
    backgrounds = []
    for path in bg_files:
        raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if raw is None:
            raise IOError(f"cannot read image: {path}")
        backgrounds.append((path.stem, cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)))
    logger.info(
        "loaded %d cutouts across %d categories, %d backgrounds",
        len(cutouts), len(categories), len(backgrounds),
    )
    return cutouts, backgrounds


# Starter shapes: one silhouette per category, drawn procedurally so the
# generator works without a photographed corpus.
_SHAPE_CANVAS = {
    "human": 200,
    "tools": 170,
    "materials": 190,
    "parts": 90,
    "vehicles": 240,
    "environment": 170,
    "safety_ppe": 150,
}


def _draw_shape(category: str, rng: np.random.Generator) -> np.ndarray:
    side = _SHAPE_CANVAS[category]
    img = np.zeros((side, side, 4), dtype=np.uint8)
    color = tuple(int(c) for c in rng.integers(40, 220, size=3)) + (255,)
    c = side // 2
    if category == "human":
        cv2.ellipse(img, (c, c), (side // 3, side // 2 - 6), 0, 0, 360, color, -1)
        cv2.circle(img, (c, side // 5), side // 7, color, -1)
    elif category == "tools":
        cv2.rectangle(img, (c - side // 10, 8), (c + side // 10, side - 8), color, -1)
        cv2.circle(img, (c, side // 6), side // 5, color, -1)
    elif category == "materials":
        m = side // 8
        cv2.rectangle(img, (m, m), (side - m, side - m), color, -1)
    elif category == "parts":
        pts = np.array(
            [[c, 6], [side - 6, c], [c, side - 6], [6, c]], dtype=np.int32
        )
        cv2.fillPoly(img, [pts], color)
    elif category == "vehicles":
        cv2.rectangle(img, (10, side // 4), (side - 10, 3 * side // 4), color, -1)
        cv2.circle(img, (side // 4, 3 * side // 4), side // 9, color, -1)
        cv2.circle(img, (3 * side // 4, 3 * side // 4), side // 9, color, -1)
    elif category == "environment":
        cv2.rectangle(img, (c - side // 12, 6), (c + side // 12, side - 6), color, -1)
        cv2.rectangle(img, (6, c - side // 12), (side - 6, c + side // 12), color, -1)
    else:
        pts = np.array(
            [[c, 8], [side - 10, side - 10], [10, side - 10]], dtype=np.int32
        )
        cv2.fillPoly(img, [pts], color)
    # Speckle the fill so rotations are visually distinguishable.
    mask = img[..., 3] > 0
    noise = rng.integers(-25, 26, size=(side, side, 1))
    rgb = img[..., :3].astype(np.int16) + noise
    img[..., :3] = np.where(mask[..., None], np.clip(rgb, 0, 255), 0).astype(np.uint8)
    return img


def _make_floor(size: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Concrete-like floor: two scales of blotches over a gray base.

    Both noise layers are upsampled from coarse grids, which keeps
    neighboring pixels correlated and the PNG output small.
    """
    w, h = size
    base = rng.uniform(95.0, 140.0)
    coarse = rng.normal(0.0, 12.0, size=(h // 40 + 2, w // 40 + 2, 3))
    blotches = cv2.resize(coarse.astype(np.float32), (w, h), interpolation=cv2.INTER_CUBIC)
    mid = rng.normal(0.0, 3.0, size=(h // 8 + 2, w // 8 + 2, 1))
    grain = cv2.resize(mid.astype(np.float32), (w, h), interpolation=cv2.INTER_LINEAR)
    img = base + blotches + grain[..., None]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_starter_assets(
    out_dir: str | Path,
    seed: int = 0,
    variants_per_category: int = 2,
    n_backgrounds: int = 8,
    background_size: tuple[int, int] = (960, 720),
) -> None:
    """Write a procedural asset tree usable by generate_dataset."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    for category in CLASS_NAMES:
        cat_dir = out_dir / "cutouts" / category
        cat_dir.mkdir(parents=True, exist_ok=True)
        for v in range(variants_per_category):
            base = _draw_shape(category, rng)
            for angle in CUTOUT_ANGLES:
                rotated = _transform_cutout(base, float(angle), 1.0)
                path = cat_dir / f"{category}{v:02d}_{angle}.png"
                cv2.imwrite(str(path), cv2.cvtColor(rotated, cv2.COLOR_RGBA2BGRA))
    bg_dir = out_dir / "backgrounds"
    bg_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_backgrounds):
        floor = _make_floor(background_size, rng)
        cv2.imwrite(
            str(bg_dir / f"floor{i:03d}.png"), cv2.cvtColor(floor, cv2.COLOR_RGB2BGR)
        )
    logger.info("wrote starter assets to %s", out_dir)


# --------------------------------------------------------------------------
# Dataset generation


def _image_rng(master_seed: int, index: int) -> np.random.Generator:
    # Spawn-key derivation lets any single image be regenerated alone.
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


def render_dataset_image(
    config: DatasetConfig,
    cutouts: Sequence[CutoutAsset],
    backgrounds: Sequence[tuple[str, np.ndarray]],
    index: int,
) -> tuple[np.ndarray, list[Annotation], dict]:
    """Produce dataset image #index deterministically from the master seed."""
    rng = _image_rng(config.seed, index)
    source_id, floor = backgrounds[int(rng.integers(0, len(backgrounds)))]
    bg = crop_background(floor, source_id, config.image_size, rng)
    pool = [c for c in cutouts if c.category in config.categories]
    if not pool:
        raise DatagenError("no cutouts match the configured categories")
    lo, hi = config.objects_per_image
    n = int(rng.integers(lo, hi + 1))
    chosen = [pool[int(k)] for k in rng.integers(0, len(pool), size=n)]
    image, annotations, mode = compose_scene(bg, chosen, rng, config)
    meta = {
        "background": source_id,
        "crop": list(bg.crop),
        "lighting": mode,
        "objects": [
            {"id": c.object_id, "category": c.category, "angle": c.angle_deg}
            for c in chosen
        ],
    }
    return image, annotations, meta


def generate_dataset(
    config: DatasetConfig,
    assets_dir: str | Path,
    out_dir: str | Path,
) -> dict:
    """Generate the full dataset tree and return its manifest.

    Layout: ``images/`` and ``labels/`` with matching stems,
    ``classes.txt`` (line number = class id), and ``manifest.json``
    recording config, per-image split, seed derivation, lighting, and
    the assets used.
    """
    out_dir = Path(out_dir)
    cutouts, backgrounds = load_assets(assets_dir, config.categories)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(config.count):
        image, annotations, meta = render_dataset_image(
            config, cutouts, backgrounds, i
        )
        stem = f"img_{i:05d}"
        img_rel = f"images/{stem}.png"
        label_rel = f"labels/{stem}.txt"
        ok = cv2.imwrite(
            str(out_dir / img_rel), cv2.cvtColor(image, cv2.COLOR_RGB2BGR)
        )
        if not ok:
            raise IOError(f"cannot write {out_dir / img_rel}")
        with open(out_dir / label_rel, "w", encoding="utf-8") as fh:
            for ann in annotations:
                fh.write(ann.to_line() + "\n")
        entries.append(
            {
                "index": i,
                "image": img_rel,
                "label": label_rel,
                "split": config.split_of(i),
                "seed": [config.seed, i],
                **meta,
            }
        )
        if (i + 1) % 500 == 0:
            logger.info("generated %d / %d images", i + 1, config.count)
    manifest = {
        "config": config.to_dict(),
        "classes": list(config.categories),
        "images": entries,
    }
    with open(out_dir / "classes.txt", "w", encoding="utf-8") as fh:
        for name in config.categories:
            fh.write(name + "\n")
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def validate_annotations(dataset_dir: str | Path) -> dict:
    """Audit a generated dataset tree against its manifest.

    Checks every referenced file exists, every label line parses, class
    ids stay within classes.txt, and boxes lie inside [0, 1].  Returns
    a report with violation strings plus per-class, per-lighting,
    per-split, and capture-angle tallies.
    """
    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / "manifest.json"
    if not manifest_path.is_file():
        raise IOError(f"no manifest.json under {dataset_dir}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    classes = manifest.get("classes", [])
    violations: list[str] = []
    per_class = {name: 0 for name in classes}
    per_lighting: dict[str, int] = {}
    per_split: dict[str, int] = {}
    angles: set[int] = set()
    seen: set[str] = set()
    for entry in manifest.get("images", []):
        name = entry.get("image", "?")
        if name in seen:
            violations.append(f"{name}: listed twice in manifest")
        seen.add(name)
        per_split[entry.get("split", "?")] = per_split.get(entry.get("split", "?"), 0) + 1
        per_lighting[entry.get("lighting", "?")] = (
            per_lighting.get(entry.get("lighting", "?"), 0) + 1
        )
        for obj in entry.get("objects", []):
            angles.add(int(obj.get("angle", -1)))
        if not (dataset_dir / name).is_file():
            violations.append(f"{name}: image file missing")
        label = entry.get("label", "")
        label_path = dataset_dir / label
        if not label_path.is_file():
            violations.append(f"{name}: label file missing")
            continue
        for ln, line in enumerate(label_path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                ann = Annotation.from_line(line)
            except (ValueError, IndexError) as exc:
                violations.append(f"{label}:{ln}: {exc}")
                continue
            if ann.class_id >= len(classes):
                violations.append(
                    f"{label}:{ln}: class id {ann.class_id} outside classes.txt"
                )
            else:
                per_class[classes[ann.class_id]] += 1
    return {
        "images": len(manifest.get("images", [])),
        "violations": violations,
        "per_class": per_class,
        "per_lighting": per_lighting,
        "per_split": per_split,
        "angles": sorted(a for a in angles if a >= 0),
    }


def detections_to_events(
    detections: Iterable[Mapping] | str | Path,
    mm_per_unit: float,
    zone: str = "B",
    classes: Sequence[str] = CLASS_NAMES,
) -> list[DetectionEvent]:
    """Convert external detector output into classified events.

    Accepts an iterable of records or a path to a JSON-lines file with
    ``{image, class_id, confidence, box: [cx, cy, w, h]}`` per line.
    The size class is derived from the larger box side scaled by the
    calibrated millimetres per normalized unit.
    """
    if mm_per_unit <= 0:
        raise ValueError(f"mm_per_unit must be positive, got {mm_per_unit}")
    if isinstance(detections, (str, Path)):
        with open(detections, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    else:
        records = list(detections)
    name_map = {
        "human": ObjectCategory.HUMAN,
        "tools": ObjectCategory.TOOLS,
        "materials": ObjectCategory.MATERIALS,
        "parts": ObjectCategory.PARTS,
        "vehicles": ObjectCategory.VEHICLES,
        "environment": ObjectCategory.ENVIRONMENT,
        "safety_ppe": ObjectCategory.SAFETY_PPE,
    }
    events = []
    for rec in records:
        class_id = int(rec["class_id"])
        if not 0 <= class_id < len(classes):
            raise ValueError(f"class id {class_id} outside the class list")
        category = name_map.get(classes[class_id], ObjectCategory.UNKNOWN)
        box = rec["box"]
        extent = max(float(box[2]), float(box[3]))
        events.append(
            DetectionEvent(
                tier=3,
                zone=zone,
                ts_ms=int(rec.get("ts_ms", 0)),
                height_mm=extent * mm_per_unit,
                category=category,
                confidence=float(rec["confidence"]),
            )
        )
    return events
