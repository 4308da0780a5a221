"""Reading and writing frames on disk.

PNG goes through OpenCV (converting between its BGR convention and the RGB
arrays used everywhere else).  PPM is the binary P6 flavour, handled
directly so sequences can be streamed without a codec.  A directory of
numbered images is treated as a frame sequence in sorted filename order.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterator

import cv2
import numpy as np

from .stripe import Frame

logger = logging.getLogger(__name__)

__all__ = [
    "read_image",
    "write_image",
    "read_ppm",
    "write_ppm",
    "iter_frames",
    "list_frame_paths",
]

_EXTENSIONS = (".png", ".ppm", ".jpg", ".jpeg", ".bmp")


def read_image(path: str | Path) -> np.ndarray:
    """Load an image file as an (H, W, 3) uint8 RGB array."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    data = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if data is None:
        raise IOError(f"cannot read image: {path}")
    return cv2.cvtColor(data, cv2.COLOR_BGR2RGB)


def write_image(path: str | Path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 RGB array; format chosen by extension."""
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8, got {rgb.dtype} {rgb.shape}")
    path = Path(path)
    if path.suffix.lower() not in _EXTENSIONS:
        raise ValueError(
            f"unsupported image extension {path.suffix!r}, expected one of {_EXTENSIONS}"
        )
    if path.suffix.lower() == ".ppm":
        write_ppm(path, rgb)
        return
    ok = cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))
    if not ok:
        raise IOError(f"cannot write image: {path}")


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 PPM file with maxval 255."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    # Header is magic, width, height, maxval separated by whitespace,
    # with '#' comments allowed between tokens.
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IOError(f"truncated PPM header: {path}")
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise IOError(f"not a binary PPM (P6): {path}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise IOError(f"unsupported PPM maxval {maxval}: {path}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * 3
    body = raw[pos:pos + expected]
    if len(body) != expected:
        raise IOError(f"PPM pixel data truncated ({len(body)} of {expected} bytes): {path}")
    return np.frombuffer(body, np.uint8).reshape(height, width, 3).copy()


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """Write a binary P6 PPM file with maxval 255."""
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8, got {rgb.dtype} {rgb.shape}")
    h, w = rgb.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + rgb.tobytes())


def list_frame_paths(directory: str | Path) -> list[Path]:
    """Image files under a directory, in sorted name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IOError(f"not a directory: {directory}")
    paths = sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in _EXTENSIONS
    )
    if not paths:
        raise IOError(f"no image files in {directory}")
    return paths


def iter_frames(source: str | Path, fps: float = 50.0) -> Iterator[Frame]:
    """Yield frames from an image file or a directory treated as a sequence.

    Timestamps are synthesized at the given frame rate starting from zero.
    """
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    source = Path(source)
    paths = [source] if source.is_file() else list_frame_paths(source)
    for i, path in enumerate(paths):
        yield Frame(pixels=read_image(path), ts_ms=int(round(i * 1000.0 / fps)))
