"""Seeded synthetic radar scenes and a hand-built detector graph.

The toy detector counts occupied BEV columns inside each anchor footprint
and turns the count into a logit; box residuals are zero. It exists so the
full pipeline can be run and scored without trained weights.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import graph as G
from .config import EvalCfg, NmsCfg, PipelineCfg, save_config
from .evaluation import Record, write_ground_truth
from .geometry import Box3D
from .postproc import AnchorCfg, AnchorClass
from .voxelize import PointCloud, VoxelGridCfg, save_points

CAR = AnchorClass("car", (2.0, 4.4, 1.6), 0.0, (0.0, math.pi / 2))


def toy_config() -> PipelineCfg:
    return PipelineCfg(
        voxel=VoxelGridCfg((0.0, -12.0, -2.0), (24.0, 12.0, 2.8), (0.4, 0.4, 0.4)),
        anchors=AnchorCfg([CAR], stride=0.4, score_threshold=0.3),
        nms=NmsCfg(0.7, 0.3, 100),
        eval=EvalCfg({"car": 0.5}, 0.3, 40),
    )


def _cells(extent_m: float, voxel: float) -> int:
    return int(round(extent_m / voxel))


def toy_detector(cfg: PipelineCfg, fill_fraction: float = 0.8, gain: float = 0.5) -> G.Graph:
    """Rank-5 detector graph for ``cfg`` with outputs ``cls`` and ``reg``.

    Per BEV column the occupied-voxel count is clamped to {0, 1}; each
    anchor's logit is ``gain * (occupied columns in footprint - fill_fraction * footprint)``.
    """
    _, C, D, H, W = cfg.voxel.shape
    vs = cfg.voxel.voxel_size[0]
    if len(cfg.anchors.classes) != 1:
        raise ValueError("the toy detector handles one anchor class")
    cls_ = cfg.anchors.classes[0]
    w_cells, l_cells = _cells(cls_.size[0], vs), _cells(cls_.size[1], vs)
    k = max(w_cells, l_cells) | 1
    A = len(cls_.yaw_set)

    nodes = [
        G.conv3d("bev", "voxels", 1, (D, 1, 1)),
        G.conv3d("excess_pre", "bev", 1, 1),
        G.relu("excess", "excess_pre"),
        G.conv3d("neg_excess", "excess", 1, 1),
        G.add("columns", "bev", "neg_excess"),
        G.conv3d("cls", "columns", A, (1, k, k), pad=(0, k // 2, k // 2)),
        G.conv3d("reg", "columns", A * 7, 1),
    ]
    wts: dict[str, np.ndarray] = {}

    def put(name, w, b):
        wts[name] = np.asarray(w, dtype=np.float32)
        wts[G.bias_name(name)] = np.asarray(b, dtype=np.float32)

    w_bev = np.zeros((1, C, D, 1, 1))
    w_bev[0, 0] = 1.0  # occupancy channel
    put("bev.w", w_bev, [0.0])
    put("excess_pre.w", np.ones((1, 1, 1, 1, 1)), [-1.0])
    put("neg_excess.w", -np.ones((1, 1, 1, 1, 1)), [0.0])
    w_cls = np.zeros((A, 1, 1, k, k))
    bias = np.zeros(A)
    for a, yaw in enumerate(cls_.yaw_set):
        # footprint rows span y (H), columns span x (W)
        along_x = abs(math.cos(yaw)) >= abs(math.sin(yaw))
        rows, cols = (w_cells, l_cells) if along_x else (l_cells, w_cells)
        r0, c0 = k // 2 - rows // 2, k // 2 - cols // 2
        w_cls[a, 0, 0, r0:r0 + rows, c0:c0 + cols] = gain
        bias[a] = -gain * fill_fraction * rows * cols
    put("cls.w", w_cls, bias)
    put("reg.w", np.zeros((A * 7, 1, 1, 1, 1)), np.zeros(A * 7))
    return G.Graph({"voxels": (1, C, D, H, W)}, nodes, ["cls", "reg"], wts)


def synthetic_scene(cfg: PipelineCfg, frames: int = 5, seed: int = 0, boxes_per_frame=(1, 4),
                    points_per_box: int = 400, clutter: int = 150):
    """Point clouds with planted boxes; returns ``[(frame_id, cloud, [Box3D])]``.

    Boxes sit on anchor cell centres with anchor size and yaw, on a
    non-overlapping lattice inside the ROI.
    """
    rng = np.random.default_rng(seed)
    v = cfg.voxel
    cls_ = cfg.anchors.classes[0]
    bw, bl, bh = cls_.size
    stride = cfg.anchors.stride
    x0, y0 = v.roi_min[0], v.roi_min[1]
    lattice = [
        (x, y)
        for x in np.arange(x0 + 4.0, v.roi_max[0] - 3.9, 6.0)
        for y in np.arange(y0 + 4.0, v.roi_max[1] - 3.9, 6.0)
    ]
    out = []
    for f in range(frames):
        n = int(rng.integers(boxes_per_frame[0], boxes_per_frame[1] + 1))
        picks = rng.choice(len(lattice), size=n, replace=False)
        boxes, pts, feats = [], [], []
        for p in sorted(picks):
            lx, ly = lattice[p]
            j = int(math.floor((lx - x0) / stride))
            i = int(math.floor((ly - y0) / stride))
            yaw = float(cls_.yaw_set[int(rng.integers(len(cls_.yaw_set)))])
            box = Box3D(x0 + (j + 0.5) * stride, y0 + (i + 0.5) * stride, cls_.z_center, bw, bl, bh, yaw)
            boxes.append(box)
            u = rng.uniform(-0.5, 0.5, (points_per_box, 3)) * np.array([bl, bw, bh]) * 0.999
            c, s = math.cos(yaw), math.sin(yaw)
            pts.append(np.stack([box.cx + u[:, 0] * c - u[:, 1] * s, box.cy + u[:, 0] * s + u[:, 1] * c, box.z + u[:, 2]], 1))
            feats.append(rng.uniform(0.2, 1.0, points_per_box))
        lo, hi = np.array(v.roi_min), np.array(v.roi_max)
        pts.append(rng.uniform(lo, hi, (clutter, 3)))
        feats.append(rng.uniform(0.0, 0.3, clutter))
        cloud = PointCloud(np.concatenate(pts), np.concatenate(feats)[:, None], ("power",))
        out.append((f"frame{f:03d}", cloud, boxes))
    return out


def write_scenario(out_dir, frames: int = 5, seed: int = 0) -> dict[str, Path]:
    """Write frames/, gt.jsonl, config.json and the rank-5 toy graph under ``out_dir``."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    cfg = toy_config()
    gts = []
    for fid, cloud, boxes in synthetic_scene(cfg, frames, seed):
        save_points(cloud, out / "frames" / f"{fid}.csv")
        gts.extend(Record(fid, cfg.anchors.classes[0].name, b) for b in boxes)
    write_ground_truth(out / "gt.jsonl", gts)
    save_config(cfg, out / "config.json")
    G.save_graph(toy_detector(cfg), out / "detector5.json")
    return {
        "frames": out / "frames",
        "gt": out / "gt.jsonl",
        "config": out / "config.json",
        "graph": out / "detector5.json",
    }
