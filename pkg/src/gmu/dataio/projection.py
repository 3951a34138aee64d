"""Spherical range-view projection of a LiDAR scan."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .kitti import OOD_ID, PointCloud
from .tensorfile import write_tensor

DEFAULT_HEIGHT = 64
DEFAULT_WIDTH = 2048
DEFAULT_FOV_UP = 3.0
DEFAULT_FOV_DOWN = -25.0
INVALID = -1.0
PGM_MAX_RANGE = 80.0
CHANNELS = ("x", "y", "z", "intensity", "range")
NO_POINT = -1  # label value for pixels without a point


@dataclass
class RangeImage:
    height: int
    width: int
    fov_up: float
    fov_down: float
    channels: np.ndarray            # (5, H, W) float32: x, y, z, intensity, range
    mask: np.ndarray                # (H, W) bool
    point_index: np.ndarray         # (H, W) int64, -1 where empty
    labels: Optional[np.ndarray]    # (H, W) int64, NO_POINT where empty
    dropped_collision: int = 0
    dropped_degenerate: int = 0
    empty: bool = False

    @property
    def range(self) -> np.ndarray:
        return self.channels[4]


def pixel_indices(xyz, height: int, width: int, fov_up: float, fov_down: float):
    """Row/column for every point plus a validity mask (r > 0)."""
    xyz = np.asarray(xyz, dtype=np.float64)
    r = np.sqrt(np.sum(xyz * xyz, axis=1))
    valid = r > 0
    safe_r = np.where(valid, r, 1.0)
    yaw = np.arctan2(xyz[:, 1], xyz[:, 0])
    pitch = np.arcsin(np.clip(xyz[:, 2] / safe_r, -1.0, 1.0))
    up, down = math.radians(fov_up), math.radians(fov_down)
    col = np.floor(0.5 * (1.0 - yaw / math.pi) * width)
    row = np.floor((1.0 - (pitch - down) / (up - down)) * height)
    col = np.clip(col, 0, width - 1).astype(np.int64)
    row = np.clip(row, 0, height - 1).astype(np.int64)
    return row, col, r, valid


def spherical_project(cloud: PointCloud, height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH,
                      fov_up: float = DEFAULT_FOV_UP, fov_down: float = DEFAULT_FOV_DOWN) -> RangeImage:
    """Project points to a ``height x width`` five-channel image.

    On a pixel collision the nearest point wins (equal ranges: lower point
    index).  Points at the origin have no defined pitch and are dropped.
    """
    if height < 1 or width < 1:
        raise ValueError("image height and width must be >= 1")
    if not fov_up > fov_down:
        raise ValueError("fov_up must exceed fov_down")
    channels = np.full((5, height, width), INVALID, dtype=np.float32)
    mask = np.zeros((height, width), dtype=bool)
    point_index = np.full((height, width), -1, dtype=np.int64)
    labels = None if cloud.labels is None else np.full((height, width), NO_POINT, dtype=np.int64)
    img = RangeImage(height, width, fov_up, fov_down, channels, mask, point_index, labels)
    if cloud.n == 0:
        warnings.warn("empty point cloud; range image is all-invalid", RuntimeWarning, stacklevel=2)
        img.empty = True
        return img

    row, col, r, valid = pixel_indices(cloud.xyz, height, width, fov_up, fov_down)
    img.dropped_degenerate = int(np.sum(~valid))
    idx = np.flatnonzero(valid)
    order = idx[np.lexsort((idx, r[idx]))]
    pix = row[order] * width + col[order]
    _, first = np.unique(pix, return_index=True)
    winners = order[first]
    img.dropped_collision = int(idx.size - winners.size)

    rw, cw = row[winners], col[winners]
    channels[0:3, rw, cw] = cloud.xyz[winners].T
    channels[3, rw, cw] = cloud.intensity[winners]
    channels[4, rw, cw] = r[winners]
    mask[rw, cw] = True
    point_index[rw, cw] = winners
    if labels is not None:
        labels[rw, cw] = cloud.labels[winners]
    return img


def range_to_pgm(range_channel: np.ndarray, mask: np.ndarray, max_range: float = PGM_MAX_RANGE) -> bytes:
    """8-bit binary PGM; grey = 255 * min(range, max_range) / max_range, invalid pixels black."""
    h, w = range_channel.shape
    scaled = np.clip(range_channel.astype(np.float64), 0.0, max_range) / max_range * 255.0
    grey = np.where(mask, np.rint(scaled), 0).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + grey.tobytes()


def write_range_image(img: RangeImage, prefix) -> list[Path]:
    """Per-channel tensors, mask, labels and a PGM preview next to ``prefix``.

    Label tensors are u32; the negative sentinels wrap (-1 -> 0xFFFFFFFF
    empty/ignored, -2 -> 0xFFFFFFFE OOD).
    """
    prefix = str(prefix)
    written = []
    for k, name in enumerate(CHANNELS):
        p = Path(f"{prefix}_{name}.gmt")
        write_tensor(p, img.channels[k])
        written.append(p)
    p = Path(f"{prefix}_mask.gmt")
    write_tensor(p, img.mask.astype(np.uint8))
    written.append(p)
    if img.labels is not None:
        p = Path(f"{prefix}_label.gmt")
        write_tensor(p, (img.labels & 0xFFFFFFFF).astype(np.uint32))
        written.append(p)
        p = Path(f"{prefix}_ood.gmt")
        write_tensor(p, (img.labels == OOD_ID).astype(np.uint8))
        written.append(p)
    p = Path(f"{prefix}_range.pgm")
    p.write_bytes(range_to_pgm(img.range, img.mask))
    written.append(p)
    return written

