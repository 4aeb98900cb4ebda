"""End-to-end frame pipeline and throughput model.

Each frame passes three stages: pre (load + voxelize + fold), net
(rank-4 graph execution) and post (decode + NMS). ``sequential`` runs them
back to back; ``staged`` runs one worker thread per stage connected by
bounded handoff queues, so a new frame can enter pre while the previous one
is still in net.
"""
from __future__ import annotations

import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import PipelineCfg
from .executor import run_graph
from .graph import Graph
from .lowering import check_rank4
from .postproc import Detection, HeadOutput, decode, generate_anchors, nms_two_stage
from .tensor import fold_depth
from .voxelize import load_points, voxelize

SEQUENTIAL = "sequential"
STAGED = "staged"
MODES = (SEQUENTIAL, STAGED)
STAGES = ("pre", "net", "post")


class RankViolation(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("graph is not rank-4 clean: " + "; ".join(violations))
        self.violations = violations


@dataclass
class StageTiming:
    pre_s: float
    net_s: float
    post_s: float
    transfer_overhead_s: float = 0.0
    io_s: float = 0.0  # point-file read, kept out of pre_s

    def __post_init__(self):
        if min(self.pre_s, self.net_s, self.post_s, self.transfer_overhead_s, self.io_s) < 0:
            raise ValueError(f"negative stage time in {self}")

    @property
    def stages(self) -> dict[str, float]:
        return {"pre": self.pre_s, "net": self.net_s, "post": self.post_s}


def fps_model(t: StageTiming, mode: str = SEQUENTIAL) -> dict[str, float]:
    """Theoretical and effective frame rate for the given stage latencies.

    theoretical = 1 / (pre + net + post) in both modes. Effective adds the
    per-frame transfer overhead to the sum (sequential) or to the slowest
    stage (staged).
    """
    total = t.pre_s + t.net_s + t.post_s
    if total <= 0.0:
        raise ValueError("stage timings are all zero; frame rate is undefined")
    if mode == SEQUENTIAL:
        period = total + t.transfer_overhead_s
    elif mode == STAGED:
        period = max(t.pre_s, t.net_s, t.post_s) + t.transfer_overhead_s
    else:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return {"theoretical_fps": 1.0 / total, "effective_fps": 1.0 / period}


def precise_sleep(seconds: float) -> None:
    """Sleep with a yielding busy tail for sub-millisecond accuracy."""
    end = time.perf_counter() + seconds
    if seconds > 0.002:
        time.sleep(seconds - 0.0015)
    while time.perf_counter() < end:
        time.sleep(0)


@dataclass
class PipelineReport:
    mode: str
    frames: int
    samples: list[StageTiming] = field(default_factory=list)
    theoretical_fps: float | None = None
    effective_fps: float | None = None
    with_io_fps: float | None = None
    measured_fps: float | None = None
    wall_s: float = 0.0
    bottleneck: str | None = None
    stage_mean_s: dict[str, float] = field(default_factory=dict)
    stage_p95_s: dict[str, float] = field(default_factory=dict)
    simulated: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["samples"] = len(self.samples)
        return d


def summarize(samples: Sequence[StageTiming], mode: str, frames: int, wall_s: float, nominal: StageTiming | None = None) -> PipelineReport:
    """Aggregate per-frame timings; ``nominal`` overrides the means for the FPS model."""
    rep = PipelineReport(mode=mode, frames=frames, samples=list(samples), wall_s=wall_s)
    if wall_s > 0 and frames:
        rep.measured_fps = frames / wall_s
    if not samples:
        return rep
    fields_ = {"pre": "pre_s", "net": "net_s", "post": "post_s", "overhead": "transfer_overhead_s", "io": "io_s"}
    for key, attr in fields_.items():
        vals = np.array([getattr(s, attr) for s in samples])
        rep.stage_mean_s[key] = float(vals.mean())
        rep.stage_p95_s[key] = float(np.percentile(vals, 95))
    mean = nominal or StageTiming(
        rep.stage_mean_s["pre"], rep.stage_mean_s["net"], rep.stage_mean_s["post"],
        rep.stage_mean_s["overhead"], rep.stage_mean_s["io"],
    )
    rep.bottleneck = max(STAGES, key=lambda s: mean.stages[s])
    try:
        fps = fps_model(mean, mode)
    except ValueError:
        return rep
    rep.theoretical_fps = fps["theoretical_fps"]
    rep.effective_fps = fps["effective_fps"]
    rep.with_io_fps = 1.0 / (mean.io_s + mean.pre_s + mean.net_s + mean.post_s + mean.transfer_overhead_s)
    return rep


class FrameProcessor:
    """The three stage callables for one compiled graph and config."""

    def __init__(self, g4: Graph, cfg: PipelineCfg):
        violations = check_rank4(g4)
        if violations:
            raise RankViolation(violations)
        if len(g4.inputs) != 1:
            raise ValueError(f"pipeline graphs take one input, got {list(g4.inputs)}")
        self.g4 = g4
        self.cfg = cfg
        self.input_name = next(iter(g4.inputs))
        self.anchors: list | None = None
        self.materialized_ranks: list[int] = []

    def load(self, path) -> object:
        return load_points(path)

    def pre(self, cloud) -> dict:
        return {self.input_name: fold_depth(voxelize(cloud, self.cfg.voxel))}

    def _watch(self, name: str, value: np.ndarray) -> None:
        self.materialized_ranks.append(value.ndim)
        if value.ndim > 4:
            raise RankViolation([f"rank-{value.ndim} tensor {name!r} materialized in the infer stage"])

    def net(self, feeds: dict) -> list[np.ndarray]:
        res = run_graph(self.g4, feeds, hook=self._watch)
        return [res.outputs[o] for o in self.g4.outputs]

    def post(self, outs: list[np.ndarray], frame: str) -> list[Detection]:
        head = HeadOutput(outs[self.cfg.cls_output], outs[self.cfg.reg_output], len(self.cfg.anchors.classes))
        if self.anchors is None:
            self.anchors = generate_anchors(head.grid, self.cfg.anchors, self.cfg.roi_origin)
        dets = decode(head, self.anchors, self.cfg.anchors, frame)
        n = self.cfg.nms
        return nms_two_stage(dets, n.t_aabb, n.t_rot, n.max_keep)


class SimulatedProcessor:
    """Stand-in stages that only sleep; the overhead is charged to the net handoff."""

    def __init__(self, timing: StageTiming):
        self.timing = timing

    def load(self, path):
        return path

    def pre(self, item):
        precise_sleep(self.timing.pre_s)
        return item

    def net(self, item):
        precise_sleep(self.timing.net_s)
        return item

    def handoff(self) -> None:
        precise_sleep(self.timing.transfer_overhead_s)

    def post(self, item, frame):
        precise_sleep(self.timing.post_s)
        return []


def _frame_id(path) -> str:
    return Path(path).stem


def _run_sequential(proc, frames) -> tuple[list[list[Detection]], list[StageTiming]]:
    results, samples = [], []
    clock = time.perf_counter
    for path in frames:
        t0 = clock()
        cloud = proc.load(path)
        t1 = clock()
        x = proc.pre(cloud)
        t2 = clock()
        y = proc.net(x)
        t3 = clock()
        if hasattr(proc, "handoff"):
            proc.handoff()
        t4 = clock()
        dets = proc.post(y, _frame_id(path))
        t5 = clock()
        results.append(dets)
        samples.append(StageTiming(t2 - t1, t3 - t2, t5 - t4, t4 - t3, t1 - t0))
    return results, samples


_DONE = object()


def _run_staged(proc, frames, capacity: int = 1) -> tuple[list[list[Detection]], list[StageTiming]]:
    n = len(frames)
    q1: queue.Queue = queue.Queue(maxsize=capacity)
    q2: queue.Queue = queue.Queue(maxsize=capacity)
    pre_t, io_t, net_t, ovh_t, post_t = ([0.0] * n for _ in range(5))
    results: list = [None] * n
    errors: list[BaseException] = []
    clock = time.perf_counter

    def drain(q: queue.Queue) -> None:
        while q.get() is not _DONE:
            pass

    def pre_worker():
        try:
            for i, path in enumerate(frames):
                if errors:
                    break
                t0 = clock()
                cloud = proc.load(path)
                t1 = clock()
                x = proc.pre(cloud)
                t2 = clock()
                io_t[i], pre_t[i] = t1 - t0, t2 - t1
                q1.put((i, x))
        except BaseException as exc:
            errors.append(exc)
        finally:
            q1.put(_DONE)

    def net_worker():
        try:
            while (item := q1.get()) is not _DONE:
                i, x = item
                t0 = clock()
                y = proc.net(x)
                t1 = clock()
                if hasattr(proc, "handoff"):
                    proc.handoff()
                t2 = clock()
                net_t[i], ovh_t[i] = t1 - t0, t2 - t1
                q2.put((i, y))
        except BaseException as exc:
            errors.append(exc)
            drain(q1)
        finally:
            q2.put(_DONE)

    def post_worker():
        try:
            while (item := q2.get()) is not _DONE:
                i, y = item
                t0 = clock()
                results[i] = proc.post(y, _frame_id(frames[i]))
                post_t[i] = clock() - t0
        except BaseException as exc:
            errors.append(exc)
            drain(q2)

    threads = [
        threading.Thread(target=pre_worker, name="stage-pre"),
        threading.Thread(target=net_worker, name="stage-net"),
        threading.Thread(target=post_worker, name="stage-post"),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    samples = [StageTiming(pre_t[i], net_t[i], post_t[i], ovh_t[i], io_t[i]) for i in range(n)]
    return results, samples


def run_frames(proc, frames: Sequence, mode: str = SEQUENTIAL, capacity: int = 1):
    if mode == SEQUENTIAL:
        return _run_sequential(proc, list(frames))
    if mode == STAGED:
        return _run_staged(proc, list(frames), capacity)
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def run_pipeline(frames: Sequence, g4: Graph, cfg: PipelineCfg, mode: str = SEQUENTIAL, capacity: int = 1):
    """Process point files; returns (detections ordered by frame id, report)."""
    proc = FrameProcessor(g4, cfg)
    frames = sorted(frames, key=lambda p: _frame_id(p))
    t0 = time.perf_counter()
    per_frame, samples = run_frames(proc, frames, mode, capacity)
    wall = time.perf_counter() - t0
    dets = [d for frame_dets in per_frame for d in frame_dets]
    return dets, summarize(samples, mode, len(frames), wall)


def bench(frames: Sequence, g4: Graph | None, cfg: PipelineCfg | None, repeats: int = 1,
          mode: str = SEQUENTIAL, simulate: StageTiming | None = None, sim_frames: int = 20) -> PipelineReport:
    """Repeat the pipeline and aggregate stage timings.

    With ``simulate`` the stages sleep for the given durations instead of
    computing; the FPS figures then come from the injected timings and the
    measured ones are reported alongside.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if simulate is not None:
        proc = SimulatedProcessor(simulate)
        frames = [f"sim{i:04d}" for i in range(sim_frames)]
    else:
        proc = FrameProcessor(g4, cfg)
        frames = sorted(frames, key=lambda p: _frame_id(p))
    samples: list[StageTiming] = []
    wall = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        _, s = run_frames(proc, frames, mode)
        wall += time.perf_counter() - t0
        samples.extend(s)
    rep = summarize(samples, mode, len(frames) * repeats, wall, nominal=simulate)
    rep.simulated = simulate is not None
    return rep
