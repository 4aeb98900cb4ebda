"""Dense voxelization of radar point clouds onto a (1, C, D, H, W) grid."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import DTYPE

AGGREGATIONS = ("mean", "max")


class PointFileError(ValueError):
    pass


@dataclass
class PointCloud:
    xyz: np.ndarray  # (N, 3) float64 metres
    features: np.ndarray  # (N, F) float64
    feature_names: tuple[str, ...] = ("power",)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.feature_names = tuple(self.feature_names)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            cols = -1 if len(self.xyz) else len(self.feature_names)
            self.features = self.features.reshape(len(self.xyz), cols)
        if len(self.features) != len(self.xyz):
            raise ValueError(f"{len(self.features)} feature rows for {len(self.xyz)} points")
        if self.features.shape[1] != len(self.feature_names):
            raise ValueError(f"{self.features.shape[1]} feature columns but names {self.feature_names}")
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.xyz)

    @classmethod
    def empty(cls, feature_names=("power",)) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, len(feature_names))), feature_names)


@dataclass
class VoxelGridCfg:
    # artifact defaults: a front-field radar grid, not published values
    roi_min: tuple[float, float, float] = (0.0, -16.0, -2.0)
    roi_max: tuple[float, float, float] = (72.0, 16.0, 7.6)
    voxel_size: tuple[float, float, float] = (0.4, 0.4, 0.4)
    feature_names: tuple[str, ...] = ("power",)
    aggregation: tuple[str, ...] = ("mean",)
    include_occupancy: bool = True

    def __post_init__(self):
        self.roi_min = tuple(float(v) for v in self.roi_min)
        self.roi_max = tuple(float(v) for v in self.roi_max)
        self.voxel_size = tuple(float(v) for v in self.voxel_size)
        self.feature_names = tuple(self.feature_names)
        agg = (self.aggregation,) if isinstance(self.aggregation, str) else tuple(self.aggregation)
        if len(agg) == 1:
            agg = agg * len(self.feature_names)
        self.aggregation = agg
        if len(self.aggregation) != len(self.feature_names):
            raise ValueError("one aggregation per feature channel")
        if any(a not in AGGREGATIONS for a in self.aggregation):
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation}")
        for lo, hi, s in zip(self.roi_min, self.roi_max, self.voxel_size):
            if not hi > lo:
                raise ValueError(f"roi_max must exceed roi_min, got [{lo}, {hi}]")
            if not s > 0:
                raise ValueError(f"voxel size must be positive, got {s}")
        if any(e < 1 for e in self.extents):
            raise ValueError(f"grid extents {self.extents} must be >= 1")

    @property
    def extents(self) -> tuple[int, int, int]:
        """(W, H, D) cell counts along x, y, z."""
        return tuple(int(round((hi - lo) / s)) for lo, hi, s in zip(self.roi_min, self.roi_max, self.voxel_size))

    @property
    def channels(self) -> int:
        return int(self.include_occupancy) + len(self.feature_names)

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        w, h, d = self.extents
        return (1, self.channels, d, h, w)


def assign_cells(cloud: PointCloud, cfg: VoxelGridCfg) -> tuple[np.ndarray, np.ndarray]:
    """Per-point (ix, iy, iz) cell indices and the mask of points kept.

    Cells are half-open ``[lo, hi)`` except the last one along each axis,
    which also takes points lying exactly on ``roi_max``.
    """
    lo = np.array(cfg.roi_min)
    hi = np.array(cfg.roi_max)
    size = np.array(cfg.voxel_size)
    n = np.array(cfg.extents)
    keep = np.all((cloud.xyz >= lo) & (cloud.xyz <= hi), axis=1)
    idx = np.floor((cloud.xyz[keep] - lo) / size).astype(np.int64)
    idx = np.clip(idx, 0, n - 1)
    return idx, keep


def voxelize(cloud: PointCloud, cfg: VoxelGridCfg) -> np.ndarray:
    if cloud.features.shape[1] != len(cfg.feature_names):
        raise ValueError(
            f"cloud has {cloud.features.shape[1]} feature channels {cloud.feature_names}, "
            f"grid expects {len(cfg.feature_names)} {cfg.feature_names}"
        )
    _, C, D, H, W = cfg.shape
    out = np.zeros((C, D * H * W), dtype=np.float64)
    idx, keep = assign_cells(cloud, cfg)
    if len(idx):
        flat = (idx[:, 2] * H + idx[:, 1]) * W + idx[:, 0]
        counts = np.bincount(flat, minlength=D * H * W)
        occupied = counts > 0
        ch = 0
        if cfg.include_occupancy:
            out[0, occupied] = 1.0
            ch = 1
        feats = cloud.features[keep]
        for f, agg in enumerate(cfg.aggregation):
            if agg == "mean":
                sums = np.bincount(flat, weights=feats[:, f], minlength=D * H * W)
                out[ch + f, occupied] = sums[occupied] / counts[occupied]
            else:
                peak = np.full(D * H * W, -np.inf)
                np.maximum.at(peak, flat, feats[:, f])
                out[ch + f, occupied] = peak[occupied]
    return out.reshape(cfg.shape).astype(DTYPE)


def load_points(path) -> PointCloud:
    """Read ``x,y,z,power[,extra...]`` CSV rows into a PointCloud."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PointFileError(f"{path}: empty file, expected header x,y,z,power") from None
        if header[:4] != ["x", "y", "z", "power"]:
            raise PointFileError(f"{path}: header must start with x,y,z,power, got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PointFileError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise PointFileError(f"{path}: row {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals[:3]):
                raise PointFileError(f"{path}: row {lineno}: non-finite coordinate")
            rows.append(vals)
    arr = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return PointCloud(arr[:, :3], arr[:, 3:], tuple(header[3:]))


def save_points(cloud: PointCloud, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", *cloud.feature_names])
        for p, f in zip(cloud.xyz, cloud.features):
            w.writerow([repr(float(v)) for v in (*p, *f)])
