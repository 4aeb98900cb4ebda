"""Rewrite rank-5 (Conv3D) graphs into rank-4-only graphs.

Rank-5 tensors ``(B, C, D, H, W)`` are carried folded as ``(B, C*D, H, W)``
with channel index ``c*D + d``. A Conv3D becomes, for each output depth
slice ``d'``, a sum over the in-range depth taps ``j`` of Conv2Ds applied
to the folded channels of input depth ``d = d'*sD - pD + j``. The per-slice
results are interleaved back into the folded layout.

Generated node ids:

``{src}/g{d}/c{c}``   single-channel slice of folded channel ``c*D + d``
``{src}/g{d}``        gather (concat) of all channels at depth ``d``
``{src}/d{k}/t{j}``   Conv2D for output slice ``k`` and depth tap ``j``
``{src}/d{k}/full``   single Conv2D when the kernel spans the whole depth
``{src}/d{k}/bias``   bias-only Conv2D for a slice whose window is all padding
``{src}/d{k}/sum``    Add of the taps of output slice ``k``
``{src}/d{k}/o{o}``   output channel ``o`` of slice ``k`` (interleave)
``{src}/out``         final Concat in folded order
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .executor import run_graph
from .graph import (
    ADD,
    CHANNEL_SLICE,
    CONCAT,
    CONV2D,
    CONV3D,
    RELU,
    UPSAMPLE,
    Graph,
    Node,
    bias_name,
    infer_shapes,
    topo_order,
    validate,
)
from .tensor import DTYPE, fold_depth, max_abs_diff


class LoweringError(ValueError):
    pass


@dataclass
class LoweringReport:
    node_map: dict[str, list[str]] = field(default_factory=dict)
    output_map: dict[str, str] = field(default_factory=dict)
    tensor_rank_histogram: dict[int, int] = field(default_factory=dict)
    conv3d_lowered: int = 0
    depth_taps_emitted: int = 0
    conv2d_emitted: int = 0
    source_weight_elements: int = 0
    lowered_weight_elements: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tensor_rank_histogram"] = {str(k): v for k, v in sorted(self.tensor_rank_histogram.items())}
        return d


class _Builder:
    def __init__(self):
        self.nodes: list[Node] = []
        self.weights: dict[str, np.ndarray] = {}
        self.ids: set[str] = set()

    def emit(self, node: Node) -> str:
        if node.id in self.ids:
            raise LoweringError(f"generated id {node.id!r} collides with an existing node")
        self.ids.add(node.id)
        self.nodes.append(node)
        return node.id

    def weight(self, name: str, w: np.ndarray, b: np.ndarray) -> str:
        if name not in self.weights:
            self.weights[name] = np.ascontiguousarray(w, dtype=DTYPE)
            self.weights[bias_name(name)] = np.ascontiguousarray(b, dtype=DTYPE)
        return name


def _lower_conv3d(bld: _Builder, n: Node, src: str, in_shape, w, b, rep: LoweringReport) -> tuple[str, list[str]]:
    _, C, D, _, _ = in_shape
    O = n.attrs["out_ch"]
    kd, kh, kw = n.attrs["kernel"]
    sd, sh, sw = n.attrs["stride"]
    pd, ph, pw = n.attrs["pad"]
    d_out = (D + 2 * pd - kd) // sd + 1
    sid = n.id
    start = len(bld.nodes)
    conv_attrs = {"out_ch": O, "kernel": [kh, kw], "stride": [sh, sw], "pad": [ph, pw]}
    zero_bias = np.zeros_like(b)

    slices: list[str] = []
    if kd == D and pd == 0:
        # kernel covers every depth: one Conv2D over all folded channels
        wname = bld.weight(f"{sid}/full", w.reshape(O, C * D, kh, kw), b)
        slices.append(bld.emit(Node(f"{sid}/d0/full", CONV2D, (src,), conv_attrs, wname)))
        rep.depth_taps_emitted += kd
        rep.conv2d_emitted += 1
    else:
        gathers: dict[int, str] = {}

        def gather(d: int) -> str:
            if D == 1:
                return src
            if d not in gathers:
                if C == 1:
                    gathers[d] = bld.emit(Node(f"{sid}/g{d}", CHANNEL_SLICE, (src,), {"start": d, "len": 1}))
                else:
                    parts = [
                        bld.emit(Node(f"{sid}/g{d}/c{c}", CHANNEL_SLICE, (src,), {"start": c * D + d, "len": 1}))
                        for c in range(C)
                    ]
                    gathers[d] = bld.emit(Node(f"{sid}/g{d}", CONCAT, tuple(parts), {"axis": 1}))
            return gathers[d]

        for k in range(d_out):
            taps = []
            for j in range(kd):
                d = k * sd - pd + j
                if not 0 <= d < D:
                    continue
                # bias rides on the first in-range tap of each slice
                if taps:
                    wname = bld.weight(f"{sid}/t{j}/nobias", w[:, :, j], zero_bias)
                else:
                    wname = bld.weight(f"{sid}/t{j}", w[:, :, j], b)
                taps.append(bld.emit(Node(f"{sid}/d{k}/t{j}", CONV2D, (gather(d),), conv_attrs, wname)))
            if not taps:
                # window lies entirely in depth padding: output is the bias alone
                wname = bld.weight(f"{sid}/zero", np.zeros_like(w[:, :, 0]), b)
                taps.append(bld.emit(Node(f"{sid}/d{k}/bias", CONV2D, (gather(0),), conv_attrs, wname)))
                rep.conv2d_emitted += 1
                slices.append(taps[0])
                continue
            rep.depth_taps_emitted += len(taps)
            rep.conv2d_emitted += len(taps)
            slices.append(taps[0] if len(taps) == 1 else bld.emit(Node(f"{sid}/d{k}/sum", ADD, tuple(taps))))

    if O > 1 and d_out > 1:
        parts = [
            bld.emit(Node(f"{sid}/d{k}/o{o}", CHANNEL_SLICE, (slices[k],), {"start": o, "len": 1}))
            for o in range(O)
            for k in range(d_out)
        ]
    else:
        parts = slices
    out = bld.emit(Node(f"{sid}/out", CONCAT, tuple(parts), {"axis": 1}))
    rep.conv3d_lowered += 1
    return out, [nd.id for nd in bld.nodes[start:]]


def lower(g5: Graph) -> tuple[Graph, LoweringReport]:
    """Lower ``g5`` to an equivalent rank-4-only graph."""
    problems = validate(g5)
    if problems:
        raise LoweringError("source graph is invalid: " + "; ".join(problems))
    shapes = infer_shapes(g5)
    for name, s in shapes.items():
        if len(s) not in (4, 5):
            raise LoweringError(f"tensor {name!r} has rank {len(s)}; only ranks 4 and 5 are supported")

    rep = LoweringReport()
    bld = _Builder()
    bld.ids.update(g5.inputs)
    new_inputs = {}
    for name, s in g5.inputs.items():
        new_inputs[name] = (s[0], s[1] * s[2], s[3], s[4]) if len(s) == 5 else s
    env = {name: name for name in g5.inputs}

    by_id = g5.node_map
    for nid in topo_order(g5):
        n = by_id[nid]
        ins = [env[i] for i in n.inputs]
        rank = len(shapes[n.inputs[0]])
        if n.op == CONV3D:
            w = g5.weights[n.weight]
            b = g5.weights[bias_name(n.weight)]
            env[nid], generated = _lower_conv3d(bld, n, ins[0], shapes[n.inputs[0]], w, b, rep)
            rep.node_map[nid] = generated
            continue
        if n.op == CONV2D:
            wname = bld.weight(n.weight, g5.weights[n.weight], g5.weights[bias_name(n.weight)])
            new = Node(nid, CONV2D, tuple(ins), n.attrs, wname)
            rep.conv2d_emitted += 1
        elif n.op in (RELU, ADD, UPSAMPLE):
            new = Node(nid, n.op, tuple(ins), n.attrs)
        elif n.op == CONCAT:
            axis = n.attrs["axis"]
            if rank == 5:
                if axis == 2:
                    raise LoweringError(f"node {nid!r}: Concat along depth cannot be expressed on folded tensors")
                axis = axis if axis < 2 else axis - 1
            new = Node(nid, CONCAT, tuple(ins), {"axis": axis})
        elif n.op == CHANNEL_SLICE:
            attrs = dict(n.attrs)
            if rank == 5:
                depth = shapes[n.inputs[0]][2]
                attrs = {"start": attrs["start"] * depth, "len": attrs["len"] * depth}
            new = Node(nid, CHANNEL_SLICE, tuple(ins), attrs)
        else:
            raise LoweringError(f"node {nid!r}: unsupported op {n.op!r}")
        env[nid] = bld.emit(new)
        rep.node_map[nid] = [nid]

    g4 = Graph(
        inputs=new_inputs,
        nodes=bld.nodes,
        outputs=[env[o] for o in g5.outputs],
        weights=bld.weights,
    )
    rep.output_map = {o: env[o] for o in g5.outputs}
    rep.tensor_rank_histogram = dict(Counter(len(s) for s in infer_shapes(g4).values()))
    rep.source_weight_elements = int(sum(v.size for v in g5.weights.values()))
    rep.lowered_weight_elements = int(sum(v.size for v in g4.weights.values()))
    return g4, rep


def check_rank4(g: Graph) -> list[str]:
    """Violations of the accelerator's rank-4 limit.

    Every Conv3D is reported, plus every rank>4 graph input that feeds
    something other than a Conv3D. All other rank-5 tensors descend from one
    of those, since no other op raises rank.
    """
    out = [f"node {n.id!r} is a Conv3D (rank-5 op)" for n in g.nodes if n.op == CONV3D]
    shapes = infer_shapes(g)
    for name in g.inputs:
        if len(shapes[name]) <= 4:
            continue
        consumers = [n for n in g.nodes if name in n.inputs]
        if not consumers or any(n.op != CONV3D for n in consumers):
            out.append(f"graph input {name!r} has rank {len(shapes[name])} {shapes[name]}")
    return out


@dataclass
class EquivalenceReport:
    max_diff: float
    passed: bool
    trials: int
    tol: float
    seed: int
    trial_diffs: list[float] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def random_inputs(g: Graph, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {name: rng.uniform(-1.0, 1.0, size=s).astype(DTYPE) for name, s in g.inputs.items()}


def _fold_if_5d(t: np.ndarray) -> np.ndarray:
    return fold_depth(t) if t.ndim == 5 else t


def verify_equivalence(g5: Graph, g4: Graph, trials: int = 20, tol: float = 1e-4, seed: int = 0) -> EquivalenceReport:
    """Run both graphs on shared random inputs and compare folded outputs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    rep = EquivalenceReport(max_diff=0.0, passed=True, trials=trials, tol=tol, seed=seed)
    if len(g5.outputs) != len(g4.outputs):
        rep.passed, rep.max_diff = False, float("inf")
        rep.error = f"output arity {len(g5.outputs)} vs {len(g4.outputs)}"
        return rep
    for _ in range(trials):
        feeds = random_inputs(g5, rng)
        ref = run_graph(g5, feeds)
        got = run_graph(g4, {k: _fold_if_5d(v) for k, v in feeds.items()})
        worst = 0.0
        for o5, o4 in zip(g5.outputs, g4.outputs):
            a = _fold_if_5d(ref.outputs[o5])
            b = got.outputs[o4]
            if a.shape != b.shape:
                rep.passed, rep.max_diff = False, float("inf")
                rep.error = f"output {o5!r} folds to {a.shape} but lowered {o4!r} is {b.shape}"
                return rep
            worst = max(worst, max_abs_diff(a, b))
        rep.trial_diffs.append(worst)
    rep.max_diff = max(rep.trial_diffs)
    rep.passed = rep.max_diff <= tol
    return rep
