import json

import numpy as np
import pytest
from oracles import perturbed_detections, scripted_evaluation

from voxlow.evaluation import (
    Record,
    RecordFileError,
    average_precision,
    evaluate,
    evaluate_records,
    load_records,
    match_detections,
    pr_curve,
)
from voxlow.geometry import Box3D


def rec(frame, x, y, score=None, z=0.0, h=1.5, yaw=0.0, cls="car"):
    return Record(frame, cls, Box3D(x, y, z, 2.0, 4.0, h, yaw), score)


def test_match_examples():
    g = rec("f", 0, 0)
    assert match_detections([rec("f", 0, 0, 0.9)], [g], 0.5) == [True]
    assert match_detections([rec("f", 0, 0, 0.9)], [], 0.5) == [False]
    # IoUs with the gt: shifting along x by 4*(1-r)/(1+r) gives BEV IoU r
    d1 = rec("f", 4 * 0.1 / 1.9, 0, 0.6)
    d2 = rec("f", 4 * 0.2 / 1.8, 0, 0.8)
    assert match_detections([d1, d2], [g], 0.5) == [False, True]
    # other frames and classes never match
    assert match_detections([rec("g", 0, 0, 0.9), rec("f", 0, 0, 0.9, cls="ped")], [g], 0.5) == [False, False]


def test_match_3d_mode_sees_height():
    g = rec("f", 0, 0)
    d = rec("f", 0, 0, 0.9, z=1.0)
    assert match_detections([d], [g], 0.5, "bev") == [True]
    assert match_detections([d], [g], 0.5, "3d") == [False]
    with pytest.raises(ValueError):
        match_detections([d], [g], 0.5, "2d")


def test_ap_examples():
    assert average_precision([True], [0.9], 1) == 1.0
    assert average_precision([], [], 3) == 0.0
    assert average_precision([], [], 0) == 1.0
    assert average_precision([False], [0.3], 0) == 0.0
    exact = average_precision([True, False, True], [0.9, 0.8, 0.7], 2, n_points=None)
    assert exact == pytest.approx(5 / 6, abs=1e-9)
    assert abs(average_precision([True, False, True], [0.9, 0.8, 0.7], 2) - exact) <= 0.02
    assert 0 <= average_precision([True, False, True], [0.9, 0.8, 0.7], 2, n_points=11) <= 1


def test_pr_curve_invariants(rng):
    for _ in range(50):
        n = int(rng.integers(1, 30))
        flags = list(rng.random(n) < 0.5)
        n_gt = sum(flags) + int(rng.integers(0, 3))
        if n_gt == 0:
            continue
        pr = pr_curve(flags, list(rng.random(n)), n_gt)
        assert np.all(np.diff(pr.recall) >= 0)
        assert np.all((0 <= pr.precision) & (pr.precision <= 1))
        assert np.all((0 <= pr.recall) & (pr.recall <= 1))


def test_ap_depends_only_on_ranking(rng):
    for _ in range(50):
        n = int(rng.integers(1, 20))
        flags = list(rng.random(n) < 0.6)
        scores = rng.random(n)
        n_gt = max(1, sum(flags))
        base = average_precision(flags, list(scores), n_gt)
        for f in (lambda s: s ** 3, lambda s: np.exp(4 * s) - 7, lambda s: 2 * s + 1):
            assert average_precision(flags, list(f(scores)), n_gt) == base


def test_low_fp_never_helps(rng):
    for _ in range(50):
        n = int(rng.integers(1, 20))
        flags = list(rng.random(n) < 0.6)
        scores = list(rng.uniform(0.1, 1, n))
        n_gt = max(1, sum(flags))
        for pts in (None, 40, 11):
            worse = average_precision(flags + [False], scores + [0.0], n_gt, pts)
            assert worse <= average_precision(flags, scores, n_gt, pts) + 1e-12


def test_bev_not_below_3d_for_vertical_error(rng):
    gts = [rec(f"f{i}", 10 * i, 0) for i in range(6)]
    dets = [rec(f"f{i}", 10 * i + 0.2, 0.1, float(rng.random()), z=float(rng.uniform(-0.6, 0.6))) for i in range(6)]
    r = evaluate_records(dets, gts, 0.5)
    assert r["AP_BEV"]["car"] >= r["AP_3D"]["car"]


def test_identical_files_give_full_ap(tmp_path):
    lines = [{"frame": "a", "class": "car", "box": [1, 2, 0, 2, 4, 1.5, 0.3]},
             {"frame": "b", "class": "ped", "box": [5, 2, 0, 0.6, 0.8, 1.7, 0]}]
    (tmp_path / "gt.jsonl").write_text("".join(json.dumps(x) + "\n" for x in lines))
    (tmp_path / "d.jsonl").write_text("".join(json.dumps({**x, "score": 1.0}) + "\n" for x in lines))
    (tmp_path / "e.jsonl").write_text("")
    full = evaluate(tmp_path / "d.jsonl", tmp_path / "gt.jsonl", 0.7)
    assert full["AP_3D"] == {"car": 1.0, "ped": 1.0} and full["mAP_BEV"] == 1.0
    empty = evaluate(tmp_path / "e.jsonl", tmp_path / "gt.jsonl", 0.7)
    assert empty["AP_BEV"] == {"car": 0.0, "ped": 0.0}


def test_bad_record_reports_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"frame": "a", "class": "car", "score": 1, "box": [1, 2, 0, 2, 4, 1.5, 0]}\n{"frame": "a"}\n')
    with pytest.raises(RecordFileError, match="line 2"):
        load_records(p, with_score=True)


def test_synthetic_scenario_matches_scripted_oracle(scenario, tmp_path):
    ref = scripted_evaluation(scenario["dets"], scenario["gt"], 0.5)
    got = evaluate(scenario["dets"], scenario["gt"], {"car": 0.5})
    assert got["AP_3D"]["car"] == pytest.approx(ref["AP_3D"], abs=1e-9)
    assert got["AP_BEV"]["car"] == pytest.approx(ref["AP_BEV"], abs=1e-9)
    noisy = tmp_path / "noisy.jsonl"
    perturbed_detections(scenario["gt"], noisy)
    for thresh in (0.3, 0.5, 0.7):
        ref = scripted_evaluation(noisy, scenario["gt"], thresh)
        got = evaluate(noisy, scenario["gt"], {"car": thresh})
        assert 0 < got["AP_BEV"]["car"] < 1
        assert got["AP_3D"]["car"] == pytest.approx(ref["AP_3D"], abs=1e-9)
        assert got["AP_BEV"]["car"] == pytest.approx(ref["AP_BEV"], abs=1e-9)
