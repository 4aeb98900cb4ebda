"""Anchors, residual decoding and two-stage NMS."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, aabb_iou, envelope, normalize_yaw, rotated_iou_bev

REG_CHANNELS = 7


@dataclass(frozen=True)
class AnchorClass:
    name: str
    size: tuple[float, float, float]  # (w, l, h) metres
    z_center: float
    yaw_set: tuple[float, ...] = (0.0, math.pi / 2)

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "yaw_set", tuple(float(v) for v in self.yaw_set))
        if len(self.size) != 3 or min(self.size) <= 0:
            raise ValueError(f"anchor size must be three positive extents, got {self.size}")
        if not self.yaw_set:
            raise ValueError("yaw_set must not be empty")


@dataclass
class AnchorCfg:
    classes: list[AnchorClass]
    stride: float = 0.4
    score_threshold: float = 0.3

    def __post_init__(self):
        if not self.classes:
            raise ValueError("at least one anchor class is required")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in [0, 1]")
        if self.stride <= 0:
            raise ValueError("stride must be positive")

    @property
    def anchors_per_cell(self) -> int:
        return sum(len(c.yaw_set) for c in self.classes)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: Box3D
    frame: str = ""


@dataclass
class HeadOutput:
    """Raw head maps: ``cls`` is (A*K, Hg, Wg) logits, ``reg`` is (A*7, Hg, Wg)."""

    cls: np.ndarray
    reg: np.ndarray
    num_classes: int = 1

    def __post_init__(self):
        self.cls = np.asarray(self.cls)
        self.reg = np.asarray(self.reg)
        if self.cls.ndim == 4:
            self.cls = self.cls[0]
        if self.reg.ndim == 4:
            self.reg = self.reg[0]
        if self.cls.shape[1:] != self.reg.shape[1:]:
            raise ValueError(f"cls grid {self.cls.shape[1:]} != reg grid {self.reg.shape[1:]}")
        if self.reg.shape[0] % REG_CHANNELS:
            raise ValueError(f"reg channels {self.reg.shape[0]} not divisible by 7")
        if self.cls.shape[0] != self.anchors_per_cell * self.num_classes:
            raise ValueError(f"cls channels {self.cls.shape[0]} != {self.anchors_per_cell} anchors x {self.num_classes} classes")

    @property
    def anchors_per_cell(self) -> int:
        return self.reg.shape[0] // REG_CHANNELS

    @property
    def grid(self) -> tuple[int, int]:
        return self.cls.shape[1], self.cls.shape[2]


def generate_anchors(grid: tuple[int, int], cfg: AnchorCfg, roi_origin=(0.0, 0.0)) -> list[Box3D]:
    """Anchors ordered by cell (row-major), then class, then yaw."""
    hg, wg = grid
    x0, y0 = roi_origin
    out = []
    for i in range(hg):
        cy = y0 + (i + 0.5) * cfg.stride
        for j in range(wg):
            cx = x0 + (j + 0.5) * cfg.stride
            for c in cfg.classes:
                w, l, h = c.size
                for yaw in c.yaw_set:
                    out.append(Box3D(cx, cy, c.z_center, w, l, h, yaw))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode(head: HeadOutput, anchors: list[Box3D], cfg: AnchorCfg, frame: str = "") -> list[Detection]:
    """Apply residuals to anchors and keep anchors scoring at least the threshold.

    Each anchor is assigned its highest-scoring class.
    """
    hg, wg = head.grid
    A, K = head.anchors_per_cell, head.num_classes
    if len(anchors) != hg * wg * A:
        raise ValueError(f"{len(anchors)} anchors for a {hg}x{wg} grid with {A} anchors per cell")
    logits = head.cls.astype(np.float64).reshape(A, K, hg, wg).transpose(2, 3, 0, 1).reshape(-1, K)
    reg = head.reg.astype(np.float64).reshape(A, REG_CHANNELS, hg, wg).transpose(2, 3, 0, 1).reshape(-1, REG_CHANNELS)
    cls_id = np.argmax(logits, axis=1)
    scores = _sigmoid(logits[np.arange(len(logits)), cls_id])
    out = []
    for idx in np.flatnonzero(scores >= cfg.score_threshold):
        a = anchors[idx]
        dx, dy, dz, dw, dl, dh, dyaw = reg[idx]
        diag = math.hypot(a.w, a.l)
        box = Box3D(
            a.cx + dx * diag,
            a.cy + dy * diag,
            a.z + dz * a.h,
            a.w * math.exp(dw),
            a.l * math.exp(dl),
            a.h * math.exp(dh),
            normalize_yaw(a.yaw + dyaw),
        )
        out.append(Detection(int(cls_id[idx]), float(scores[idx]), box, frame))
    return out


def _greedy(order: list[int], boxes, iou_fn, thresh: float) -> list[int]:
    keep: list[int] = []
    for i in order:
        if all(iou_fn(boxes[k], boxes[i]) < thresh for k in keep):
            keep.append(i)
    return keep


def nms_two_stage(dets: list[Detection], t_aabb: float = 0.7, t_rot: float = 0.3, max_keep: int = 100) -> list[Detection]:
    """Per-class greedy NMS: axis-aligned envelopes first, then rotated BEV IoU.

    A box is dropped when its IoU with an already kept box reaches the
    stage threshold. Ties in score keep input order.
    """
    if not (0.0 <= t_aabb <= 1.0 and 0.0 <= t_rot <= 1.0):
        raise ValueError("NMS thresholds must lie in [0, 1]")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    envs = [envelope(d.box.bev) for d in dets]
    bevs = [d.box.bev for d in dets]
    kept: list[int] = []
    for cls in sorted({d.class_id for d in dets}):
        mine = [i for i in order if dets[i].class_id == cls]
        stage1 = _greedy(mine, envs, aabb_iou, t_aabb)
        kept.extend(_greedy(stage1, bevs, rotated_iou_bev, t_rot))
    kept.sort(key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in kept[:max_keep]]


def format_float(v: float) -> str:
    """Canonical 6-significant-digit rendering used in output files."""
    s = f"{float(v):.6g}"
    return "0" if s == "-0" else s


def detection_line(d: Detection, class_names: list[str]) -> str:
    box = ", ".join(format_float(v) for v in d.box.as_list())
    return (
        f'{{"frame": {json.dumps(d.frame)}, "class": {json.dumps(class_names[d.class_id])}, '
        f'"score": {format_float(d.score)}, "box": [{box}]}}'
    )


def write_detections(path, dets: list[Detection], class_names: list[str]) -> None:
    """One JSON object per line, floats rendered by :func:`format_float`."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in dets:
            fh.write(detection_line(d, class_names) + "\n")
