import json
import math

import numpy as np
import pytest
from oracles import shapely_nms

from voxlow.geometry import Box3D, rotated_iou_bev
from voxlow.postproc import (
    AnchorCfg,
    AnchorClass,
    Detection,
    HeadOutput,
    decode,
    detection_line,
    format_float,
    generate_anchors,
    nms_two_stage,
)

CAR = AnchorClass("car", (2.0, 4.0, 1.5), -0.5)
PED = AnchorClass("ped", (0.6, 0.8, 1.7), 0.2, (0.0,))


def test_anchor_cfg_validation():
    with pytest.raises(ValueError):
        AnchorClass("x", (1, 0, 1), 0)
    with pytest.raises(ValueError):
        AnchorClass("x", (1, 1, 1), 0, ())
    with pytest.raises(ValueError):
        AnchorCfg([CAR], score_threshold=1.5)


def test_one_cell_two_yaws():
    a = generate_anchors((1, 1), AnchorCfg([CAR]))
    assert len(a) == 2
    assert (a[0].cx, a[0].cy, a[0].z) == (a[1].cx, a[1].cy, a[1].z)
    assert a[0].yaw == 0.0 and a[1].yaw == pytest.approx(math.pi / 2)


def test_anchor_ordering():
    cfg = AnchorCfg([CAR, PED], stride=0.8)
    a = generate_anchors((2, 3), cfg, roi_origin=(0.0, 0.0))
    assert len(a) == 2 * 3 * 3
    assert a[0].cx == pytest.approx(0.4) and a[0].cy == pytest.approx(0.4)
    expected = []
    for i in range(2):
        for j in range(3):
            for c in (CAR, PED):
                for yaw in c.yaw_set:
                    expected.append((0.4 + 0.8 * j, 0.4 + 0.8 * i, c.size[0], yaw))
    got = [(b.cx, b.cy, b.w, b.yaw) for b in a]
    assert got == pytest.approx(expected)
    cfg1 = AnchorCfg([CAR], stride=0.8)
    assert len(generate_anchors((2, 3), cfg1)) == 12


def _head(rng, A, K, hg, wg):
    return HeadOutput(rng.normal(size=(A * K, hg, wg)), rng.normal(scale=0.3, size=(A * 7, hg, wg)), K)


def test_identity_decode():
    cfg = AnchorCfg([CAR], score_threshold=0.5)
    anchors = generate_anchors((1, 1), cfg)
    dets = decode(HeadOutput(np.zeros((2, 1, 1)), np.zeros((14, 1, 1))), anchors, cfg)
    assert [d.box for d in dets] == anchors
    assert all(d.score == 0.5 for d in dets)


def test_exp_width():
    cfg = AnchorCfg([CAR], score_threshold=0.0)
    anchors = generate_anchors((1, 1), cfg)
    reg = np.zeros((14, 1, 1))
    reg[3] = math.log(2)
    d = decode(HeadOutput(np.zeros((2, 1, 1)), reg), anchors, cfg)[0]
    assert d.box.w == pytest.approx(2 * CAR.size[0])


def test_decode_vs_loop_oracle(rng):
    cfg = AnchorCfg([CAR, PED], stride=0.5, score_threshold=0.4)
    A, K, hg, wg = cfg.anchors_per_cell, 2, 4, 5
    head = _head(rng, A, K, hg, wg)
    anchors = generate_anchors((hg, wg), cfg, (1.0, -2.0))
    got = decode(head, anchors, cfg)
    ref = []
    n = 0
    for i in range(hg):
        for j in range(wg):
            for a in range(A):
                logits = [float(head.cls[a * K + k, i, j]) for k in range(K)]
                k = max(range(K), key=lambda t: (logits[t], -t))
                score = 1 / (1 + math.exp(-logits[k]))
                an = anchors[n]
                n += 1
                if score < cfg.score_threshold:
                    continue
                r = [float(head.reg[a * 7 + t, i, j]) for t in range(7)]
                d = math.sqrt(an.w ** 2 + an.l ** 2)
                box = [an.cx + r[0] * d, an.cy + r[1] * d, an.z + r[2] * an.h,
                       an.w * math.exp(r[3]), an.l * math.exp(r[4]), an.h * math.exp(r[5]),
                       math.atan2(math.sin(an.yaw + r[6]), math.cos(an.yaw + r[6]))]
                ref.append((k, score, box))
    assert len(got) == len(ref) > 0
    for g, (k, score, box) in zip(got, ref):
        assert g.class_id == k
        assert g.score == pytest.approx(score, abs=1e-12)
        assert g.box.as_list() == pytest.approx(box, abs=1e-6)


def test_decode_shape_errors(rng):
    cfg = AnchorCfg([CAR])
    with pytest.raises(ValueError):
        HeadOutput(np.zeros((3, 2, 2)), np.zeros((14, 2, 2)))
    with pytest.raises(ValueError):
        decode(_head(rng, 2, 1, 2, 2), generate_anchors((3, 3), cfg), cfg)


def det(cx, cy, score, cls=0, w=2.0, l=4.0, yaw=0.0):
    return Detection(cls, score, Box3D(cx, cy, 0.0, w, l, 1.5, yaw))


def test_nms_near_duplicates():
    a, b = det(0, 0, 0.9), det(0.05, 0, 0.8)
    iou = rotated_iou_bev(a.box.bev, b.box.bev)
    assert nms_two_stage([b, a], t_aabb=iou, t_rot=iou) == [a]


def test_nms_disjoint_boxes_survive():
    a, b = det(0, 0, 0.9), det(20, 0, 0.8)
    for t in (0.0, 0.3, 1.0):
        assert nms_two_stage([a, b], t_aabb=max(t, 1e-9), t_rot=max(t, 1e-9)) == [a, b]


def test_nms_tie_break_by_input_order():
    a, b = det(0, 0, 0.5), det(0, 0, 0.5)
    out = nms_two_stage([a, b])
    assert len(out) == 1 and out[0] is a


def test_nms_max_keep():
    dets = [det(10 * i, 0, 0.9 - 0.01 * i) for i in range(10)]
    assert nms_two_stage(dets, max_keep=3) == dets[:3]


def random_dets(rng, n, classes=2, spread=6.0):
    out = []
    for _ in range(n):
        out.append(det(*rng.uniform(0, spread, 2), float(rng.uniform(0, 1)), int(rng.integers(0, classes)),
                       float(rng.uniform(0.5, 3)), float(rng.uniform(1, 5)), float(rng.uniform(-np.pi, np.pi))))
    return out


def test_nms_matches_oracle(rng):
    for _ in range(150):
        dets = random_dets(rng, int(rng.integers(0, 11)))
        t_a, t_r = float(rng.uniform(0.05, 0.9)), float(rng.uniform(0.05, 0.9))
        got = nms_two_stage(dets, t_a, t_r, max_keep=8)
        ref = shapely_nms(dets, t_a, t_r, 8)
        assert [id(d) for d in got] == [id(dets[i]) for i in ref]


def test_nms_idempotent_and_separated(rng):
    for _ in range(100):
        dets = random_dets(rng, 10)
        t_a, t_r = float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 0.9))
        out = nms_two_stage(dets, t_a, t_r)
        assert nms_two_stage(out, t_a, t_r) == out
        assert [d.score for d in out] == sorted((d.score for d in out), reverse=True)
        for i, a in enumerate(out):
            for b in out[i + 1:]:
                if a.class_id == b.class_id:
                    assert rotated_iou_bev(a.box.bev, b.box.bev) < t_r


def test_nms_per_class_isolation(rng):
    for _ in range(50):
        mine = random_dets(rng, 6, classes=1)
        others = [Detection(1, d.score, d.box) for d in random_dets(rng, 6, classes=1)]
        alone = nms_two_stage(mine)
        mixed = [d for d in nms_two_stage(mine + others) if d.class_id == 0]
        assert mixed == alone


def test_detection_line_format():
    d = Detection(0, 0.123456789, Box3D(1.0, -0.0, 2.5, 1.9, 4.5, 1.6, 0.0), "f0")
    line = detection_line(d, ["car"])
    assert json.loads(line) == {"frame": "f0", "class": "car", "score": 0.123457, "box": [1, 0, 2.5, 1.9, 4.5, 1.6, 0]}
    assert format_float(-1e-20) == "-1e-20" and format_float(-0.0) == "0"
