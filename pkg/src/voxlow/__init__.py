"""Rank-5 to rank-4 graph lowering and a CPU reference pipeline for radar 3D detection.

The main entry points are re-exported here; see the submodules for the rest.
"""
from .evaluation import evaluate
from .executor import run_graph
from .geometry import Box3D, RotatedBox2D, iou_3d, rotated_iou_bev
from .graph import Graph, load_graph, save_graph, validate
from .kernels import BACKEND
from .lowering import check_rank4, lower, verify_equivalence
from .pipeline import bench, fps_model, run_pipeline
from .postproc import decode, generate_anchors, nms_two_stage
from .tensor import fold_depth, unfold_depth
from .voxelize import PointCloud, VoxelGridCfg, load_points, voxelize

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Box3D",
    "Graph",
    "PointCloud",
    "RotatedBox2D",
    "VoxelGridCfg",
    "bench",
    "check_rank4",
    "decode",
    "evaluate",
    "fold_depth",
    "fps_model",
    "generate_anchors",
    "iou_3d",
    "load_graph",
    "load_points",
    "lower",
    "nms_two_stage",
    "rotated_iou_bev",
    "run_graph",
    "run_pipeline",
    "save_graph",
    "unfold_depth",
    "validate",
    "verify_equivalence",
    "voxelize",
]
