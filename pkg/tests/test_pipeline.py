import time

import numpy as np
import pytest

from voxlow.graph import load_graph
from voxlow.pipeline import (
    SEQUENTIAL,
    STAGED,
    FrameProcessor,
    RankViolation,
    SimulatedProcessor,
    StageTiming,
    bench,
    fps_model,
    run_frames,
    run_pipeline,
)
from voxlow.postproc import write_detections


def test_fps_model_examples():
    t = StageTiming(0.017, 0.028, 0.022)
    assert fps_model(t)["theoretical_fps"] == pytest.approx(14.925, abs=0.01)
    t = StageTiming(0.017, 0.028, 0.022, 0.00567)
    assert fps_model(t)["effective_fps"] == pytest.approx(13.76, abs=0.01)
    staged = fps_model(StageTiming(0.01, 0.01, 0.01), STAGED)
    assert staged["effective_fps"] == pytest.approx(100.0)
    assert staged["theoretical_fps"] == pytest.approx(1 / 0.03)


def test_fps_model_errors():
    with pytest.raises(ValueError):
        fps_model(StageTiming(0, 0, 0))
    with pytest.raises(ValueError):
        fps_model(StageTiming(0.1, 0, 0), "parallel")
    with pytest.raises(ValueError):
        StageTiming(-1, 0, 0)


@pytest.mark.parametrize("mode", [SEQUENTIAL, STAGED])
def test_effective_decreases_with_overhead(mode):
    prev = None
    for ovh in np.linspace(0, 0.05, 30):
        fps = fps_model(StageTiming(0.017, 0.028, 0.022, float(ovh)), mode)
        if mode == SEQUENTIAL:
            assert fps["effective_fps"] <= fps["theoretical_fps"]
        if prev is not None:
            assert fps["effective_fps"] < prev
        prev = fps["effective_fps"]


def test_zero_frames(scenario):
    g4 = load_graph(scenario["graph4"])
    dets, rep = run_pipeline([], g4, scenario["cfg"])
    assert dets == [] and rep.frames == 0 and rep.samples == []


def test_refuses_rank5_graph(scenario):
    g5 = load_graph(scenario["graph"])
    with pytest.raises(RankViolation) as exc:
        run_pipeline(scenario["frame_files"][:1], g5, scenario["cfg"])
    assert any("Conv3D" in v for v in exc.value.violations)


def test_no_rank5_tensor_materialized(scenario):
    proc = FrameProcessor(load_graph(scenario["graph4"]), scenario["cfg"])
    run_frames(proc, scenario["frame_files"][:2])
    assert proc.materialized_ranks and max(proc.materialized_ranks) <= 4


def test_cross_mode_equality(scenario, tmp_path):
    g4 = load_graph(scenario["graph4"])
    names = scenario["cfg"].anchors.class_names
    files = list(reversed(scenario["frame_files"]))
    seq, _ = run_pipeline(files, g4, scenario["cfg"], SEQUENTIAL)
    stg, rep = run_pipeline(files, g4, scenario["cfg"], STAGED)
    assert seq and rep.mode == STAGED
    write_detections(tmp_path / "a.jsonl", seq, names)
    write_detections(tmp_path / "b.jsonl", stg, names)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() == scenario["dets"].read_bytes()
    frames = [d.frame for d in seq]
    assert frames == sorted(frames)


def test_single_frame_cross_mode(scenario):
    g4 = load_graph(scenario["graph4"])
    one = scenario["frame_files"][:1]
    a, _ = run_pipeline(one, g4, scenario["cfg"], SEQUENTIAL)
    b, _ = run_pipeline(one, g4, scenario["cfg"], STAGED)
    assert a == b


def test_bench_repeats(scenario):
    g4 = load_graph(scenario["graph4"])
    rep = bench(scenario["frame_files"][:1], g4, scenario["cfg"], repeats=3)
    assert len(rep.samples) == 3 and rep.frames == 3
    for key, attr in (("pre", "pre_s"), ("net", "net_s"), ("post", "post_s")):
        vals = [getattr(s, attr) for s in rep.samples]
        assert min(vals) <= rep.stage_mean_s[key] <= max(vals)
    assert rep.bottleneck in ("pre", "net", "post")
    assert rep.theoretical_fps > 0
    with pytest.raises(ValueError):
        bench([], g4, scenario["cfg"], repeats=0)


def test_bench_simulated():
    rep = bench([], None, None, simulate=StageTiming(0.017, 0.028, 0.022, 0.0), sim_frames=3)
    assert rep.simulated and rep.bottleneck == "net"
    assert rep.theoretical_fps == pytest.approx(14.93, abs=0.01)
    rep = bench([], None, None, simulate=StageTiming(0.017, 0.028, 0.022, 0.00567), sim_frames=3)
    assert rep.effective_fps == pytest.approx(13.76, abs=0.01)
    assert rep.measured_fps == pytest.approx(13.76, rel=0.1)


class _Stamped(SimulatedProcessor):
    def __init__(self, timing):
        super().__init__(timing)
        self.done = []

    def post(self, item, frame):
        out = super().post(item, frame)
        self.done.append(time.perf_counter())
        return out


def test_staged_steady_state_period():
    t = StageTiming(0.01, 0.03, 0.015, 0.005)
    proc = _Stamped(t)
    run_frames(proc, [f"f{i}" for i in range(15)], STAGED)
    done = proc.done[3:]
    period = (done[-1] - done[0]) / (len(done) - 1)
    expected = max(t.pre_s, t.net_s, t.post_s) + t.transfer_overhead_s
    assert period == pytest.approx(expected, rel=0.05)


def test_staged_error_propagates():
    class Boom(SimulatedProcessor):
        def net(self, item):
            if item == "f2":
                raise RuntimeError("net failed")
            return item

    with pytest.raises(RuntimeError, match="net failed"):
        run_frames(Boom(StageTiming(0, 0, 0)), [f"f{i}" for i in range(6)], STAGED)
