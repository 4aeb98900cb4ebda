"""Average precision in BEV and 3D."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import Box3D, iou_3d, rotated_iou_bev
from .postproc import format_float

BEV = "bev"
MODE_3D = "3d"
DEFAULT_IOU = 0.3  # artifact default, not a published value


class RecordFileError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    """A detection (``score`` set) or ground truth (``score`` None)."""

    frame: str
    cls: str
    box: Box3D
    score: float | None = None


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    n_gt: int


def load_records(path, with_score: bool) -> list[Record]:
    out = []
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                box = Box3D.from_list(obj["box"])
                score = float(obj["score"]) if with_score else None
                out.append(Record(str(obj["frame"]), str(obj["class"]), box, score))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise RecordFileError(f"{path}: line {lineno}: {type(exc).__name__}: {exc}") from None
    return out


def _iou(mode: str):
    if mode == BEV:
        return lambda a, b: rotated_iou_bev(a.bev, b.bev)
    if mode == MODE_3D:
        return iou_3d
    raise ValueError(f"mode must be {BEV!r} or {MODE_3D!r}, got {mode!r}")


def match_detections(dets: Sequence[Record], gts: Sequence[Record], iou_thresh: float, mode: str = BEV) -> list[bool]:
    """TP flags aligned with ``dets``.

    Detections are visited by descending score; each takes its best
    still-unmatched ground truth of the same frame and class and is a true
    positive when that IoU reaches ``iou_thresh``.
    """
    iou = _iou(mode)
    pool: dict[tuple[str, str], list[int]] = {}
    for gi, g in enumerate(gts):
        pool.setdefault((g.frame, g.cls), []).append(gi)
    used = [False] * len(gts)
    flags = [False] * len(dets)
    for di in sorted(range(len(dets)), key=lambda i: (-dets[i].score, i)):
        d = dets[di]
        best, best_gi = -1.0, -1
        for gi in pool.get((d.frame, d.cls), ()):
            if used[gi]:
                continue
            v = iou(d.box, gts[gi].box)
            if v > best:
                best, best_gi = v, gi
        if best_gi >= 0 and best >= iou_thresh:
            used[best_gi] = True
            flags[di] = True
    return flags


def pr_curve(flags: Sequence[bool], scores: Sequence[float], n_gt: int) -> PRCurve:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    tp = np.cumsum([1 if flags[i] else 0 for i in order], dtype=np.float64)
    fp = np.cumsum([0 if flags[i] else 1 for i in order], dtype=np.float64)
    recall = tp / n_gt if n_gt else np.zeros_like(tp)
    precision = tp / np.maximum(tp + fp, 1.0)
    return PRCurve(recall, precision, n_gt)


def average_precision(flags: Sequence[bool], scores: Sequence[float], n_gt: int, n_points: int | None = 40) -> float:
    """Interpolated AP; ``n_points=None`` gives the exact area under the envelope.

    With sampling, precision is averaged at recalls ``k / n_points`` for
    ``k = 1..n_points``.
    """
    if n_gt == 0:
        return 1.0 if len(flags) == 0 else 0.0
    if len(flags) == 0:
        return 0.0
    pr = pr_curve(flags, scores, n_gt)
    # interpolated precision: running max from the right
    envelope = np.maximum.accumulate(pr.precision[::-1])[::-1]
    if n_points is None:
        prev = np.concatenate([[0.0], pr.recall[:-1]])
        return float(np.sum((pr.recall - prev) * envelope))
    total = 0.0
    for k in range(1, n_points + 1):
        r = k / n_points
        hit = np.flatnonzero(pr.recall >= r - 1e-12)
        total += envelope[hit[0]] if len(hit) else 0.0
    return total / n_points


def evaluate_records(
    dets: Sequence[Record],
    gts: Sequence[Record],
    iou_thresh: float | Mapping[str, float] = DEFAULT_IOU,
    classes: Sequence[str] | None = None,
    n_points: int | None = 40,
) -> dict:
    if classes is None:
        classes = sorted({r.cls for r in gts} | {r.cls for r in dets})
    report: dict = {}
    for mode, key in ((MODE_3D, "3D"), (BEV, "BEV")):
        aps = {}
        for c in classes:
            t = iou_thresh.get(c, DEFAULT_IOU) if isinstance(iou_thresh, Mapping) else iou_thresh
            cd = [d for d in dets if d.cls == c]
            cg = [g for g in gts if g.cls == c]
            flags = match_detections(cd, cg, t, mode)
            aps[c] = average_precision(flags, [d.score for d in cd], len(cg), n_points)
        report[f"AP_{key}"] = aps
        report[f"mAP_{key}"] = float(np.mean(list(aps.values()))) if aps else 0.0
    return report


def evaluate(dets_file, gts_file, iou_thresh=DEFAULT_IOU, classes=None, n_points: int | None = 40) -> dict:
    """Report ``{"AP_3D": {...}, "AP_BEV": {...}, "mAP_3D": x, "mAP_BEV": y}``."""
    dets = load_records(dets_file, with_score=True)
    gts = load_records(gts_file, with_score=False)
    return evaluate_records(dets, gts, iou_thresh, classes, n_points)


def write_ground_truth(path, records: Sequence[Record]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            box = ", ".join(format_float(v) for v in r.box.as_list())
            fh.write(f'{{"frame": {json.dumps(r.frame)}, "class": {json.dumps(r.cls)}, "box": [{box}]}}\n')
