"""SemanticKITTI scan (``.bin``) and label (``.label``) readers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import InvalidSpec, LengthMismatch, MalformedScan

IGNORE_ID = -1   # unlabeled / unmapped
OOD_ID = -2      # excluded from training, counted as OOD ground truth


@dataclass
class PointCloud:
    xyz: np.ndarray                    # (n, 3) float32, metres
    intensity: np.ndarray              # (n,) float32
    labels: Optional[np.ndarray] = None
    dropped_nonfinite: int = 0
    # rows of the raw file that survived the finiteness filter
    kept: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.xyz.shape[0]


@dataclass
class LabelMap:
    raw_to_train: dict[int, int]
    names: dict[int, str] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        ids = [t for t in self.raw_to_train.values() if t >= 0]
        return max(ids) + 1 if ids else 0

    def apply(self, raw: np.ndarray) -> np.ndarray:
        lut_size = max(max(self.raw_to_train, default=0), int(raw.max(initial=0))) + 1
        lut = np.full(lut_size, IGNORE_ID, dtype=np.int64)
        for r, t in self.raw_to_train.items():
            lut[r] = t
        return lut[raw]


def read_kitti_scan(path) -> PointCloud:
    data = Path(path).read_bytes()
    if len(data) % 16:
        raise MalformedScan(f"{path}: {len(data)} bytes is not a multiple of 16")
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float32)
    keep = np.all(np.isfinite(pts), axis=1)
    dropped = int(pts.shape[0] - keep.sum())
    pts = pts[keep]
    return PointCloud(xyz=pts[:, :3].copy(), intensity=pts[:, 3].copy(), dropped_nonfinite=dropped, kept=keep)


def read_kitti_labels(path, n_expected: int, label_map: LabelMap | None = None) -> np.ndarray:
    """Semantic ids (low 16 bits), remapped to training ids when a map is given."""
    data = Path(path).read_bytes()
    if len(data) != 4 * n_expected:
        raise LengthMismatch(f"{path}: {len(data)} bytes, expected {4 * n_expected} for {n_expected} points")
    raw = np.frombuffer(data, dtype="<u4").astype(np.int64) & 0xFFFF
    return raw if label_map is None else label_map.apply(raw)


def attach_labels(cloud: PointCloud, labels: np.ndarray) -> PointCloud:
    if cloud.kept is not None and labels.shape[0] == cloud.kept.shape[0]:
        labels = labels[cloud.kept]
    if labels.shape[0] != cloud.n:
        raise LengthMismatch(f"{labels.shape[0]} labels for {cloud.n} points")
    cloud.labels = labels
    return cloud


def read_label_map(path=None) -> LabelMap:
    """Parse a ``raw_id,train_id,name`` CSV; ``None`` loads the bundled SemanticKITTI map.

    ``train_id`` -1 ignores a raw class and -2 routes it to the OOD set.
    """
    if path is None:
        text = resources.files("gmu.data").joinpath("semantic_kitti_map.csv").read_text()
    else:
        text = Path(path).read_text()
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["raw_id", "train_id", "name"]:
        raise InvalidSpec("label map must have header raw_id,train_id,name")
    mapping, names = {}, {}
    for row in reader:
        try:
            raw, train = int(row["raw_id"]), int(row["train_id"])
        except (TypeError, ValueError):
            raise InvalidSpec(f"bad label map row {row}") from None
        if raw < 0 or raw > 0xFFFF or train < OOD_ID:
            raise InvalidSpec(f"label map ids out of range in row {row}")
        mapping[raw] = train
        names.setdefault(train, row["name"].strip())
    return LabelMap(mapping, names)
