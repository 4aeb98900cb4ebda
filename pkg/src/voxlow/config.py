"""Pipeline configuration file (JSON).

Sections: ``voxel``, ``anchors``, ``nms``, ``eval`` and ``head``. Values
that are choices of this package rather than published constants carry
``"source": "artifact-default"``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .postproc import AnchorCfg, AnchorClass
from .voxelize import VoxelGridCfg

ARTIFACT_DEFAULT = "artifact-default"


class ConfigError(ValueError):
    pass


@dataclass
class NmsCfg:
    t_aabb: float = 0.7
    t_rot: float = 0.3
    max_keep: int = 100


@dataclass
class EvalCfg:
    iou_thresh: dict[str, float] = field(default_factory=dict)
    default_iou: float = 0.3
    n_points: int | None = 40

    def thresholds(self, classes) -> dict[str, float]:
        return {c: self.iou_thresh.get(c, self.default_iou) for c in classes}


@dataclass
class PipelineCfg:
    voxel: VoxelGridCfg = field(default_factory=VoxelGridCfg)
    anchors: AnchorCfg = field(default_factory=lambda: AnchorCfg([AnchorClass("car", (1.9, 4.5, 1.6), 0.0)]))
    nms: NmsCfg = field(default_factory=NmsCfg)
    eval: EvalCfg = field(default_factory=EvalCfg)
    cls_output: int = 0
    reg_output: int = 1

    @property
    def roi_origin(self) -> tuple[float, float]:
        return self.voxel.roi_min[0], self.voxel.roi_min[1]

    def to_json(self) -> dict:
        v, a = self.voxel, self.anchors
        return {
            "voxel": {
                "roi_min": list(v.roi_min),
                "roi_max": list(v.roi_max),
                "voxel_size": list(v.voxel_size),
                "features": list(v.feature_names),
                "aggregation": list(v.aggregation),
                "include_occupancy": v.include_occupancy,
                "source": ARTIFACT_DEFAULT,
            },
            "anchors": {
                "stride": a.stride,
                "score_threshold": a.score_threshold,
                "classes": [
                    {"name": c.name, "size": list(c.size), "z_center": c.z_center, "yaw_set": list(c.yaw_set)}
                    for c in a.classes
                ],
                "source": ARTIFACT_DEFAULT,
            },
            "nms": {
                "t_aabb": self.nms.t_aabb,
                "t_rot": self.nms.t_rot,
                "max_keep": self.nms.max_keep,
                "source": ARTIFACT_DEFAULT,
            },
            "eval": {
                "iou_thresh": dict(self.eval.iou_thresh),
                "default_iou": self.eval.default_iou,
                "n_points": self.eval.n_points,
                "source": ARTIFACT_DEFAULT,
            },
            "head": {"cls_output": self.cls_output, "reg_output": self.reg_output},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineCfg":
        try:
            cfg = cls()
            if "voxel" in doc:
                v = doc["voxel"]
                cfg.voxel = VoxelGridCfg(
                    roi_min=v["roi_min"],
                    roi_max=v["roi_max"],
                    voxel_size=v["voxel_size"],
                    feature_names=v.get("features", ["power"]),
                    aggregation=v.get("aggregation", "mean"),
                    include_occupancy=bool(v.get("include_occupancy", True)),
                )
            if "anchors" in doc:
                a = doc["anchors"]
                cfg.anchors = AnchorCfg(
                    classes=[
                        AnchorClass(c["name"], c["size"], c["z_center"], c.get("yaw_set", (0.0, math.pi / 2)))
                        for c in a["classes"]
                    ],
                    stride=float(a.get("stride", 0.4)),
                    score_threshold=float(a.get("score_threshold", 0.3)),
                )
            if "nms" in doc:
                n = doc["nms"]
                cfg.nms = NmsCfg(float(n.get("t_aabb", 0.7)), float(n.get("t_rot", 0.3)), int(n.get("max_keep", 100)))
            if "eval" in doc:
                e = doc["eval"]
                cfg.eval = EvalCfg(
                    {k: float(x) for k, x in e.get("iou_thresh", {}).items()},
                    float(e.get("default_iou", 0.3)),
                    e.get("n_points", 40),
                )
            if "head" in doc:
                cfg.cls_output = int(doc["head"].get("cls_output", 0))
                cfg.reg_output = int(doc["head"].get("reg_output", 1))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {type(exc).__name__}: {exc}") from None
        return cfg


def load_config(path) -> PipelineCfg:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return PipelineCfg.from_json(doc)


def save_config(cfg: PipelineCfg, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_json(), indent=2) + "\n", encoding="utf-8")
