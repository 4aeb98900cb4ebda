"""Minimal neural-graph IR: nodes, validation, shape inference and file formats.

A graph file is a JSON document::

    {"inputs": {"x": [1, 2, 8, 16, 16]},
     "nodes": [{"id": "c1", "op": "Conv3D", "attrs": {...},
                "inputs": ["x"], "weight": "c1.w"}],
     "outputs": ["c1"],
     "weights_file": "model.vxw"}

Weights live in a little-endian binary blob (magic ``VXW1``). Every conv
node names a weight ``W``; its bias is stored under ``W + ".bias"``.
"""
from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .tensor import DTYPE, Shape, ShapeError, as_shape

CONV3D = "Conv3D"
CONV2D = "Conv2D"
RELU = "ReLU"
ADD = "Add"
CONCAT = "Concat"
CHANNEL_SLICE = "ChannelSlice"
UPSAMPLE = "NearestUpsample"

OP_KINDS = (CONV3D, CONV2D, RELU, ADD, CONCAT, CHANNEL_SLICE, UPSAMPLE)
CONV_KINDS = (CONV3D, CONV2D)

WEIGHTS_MAGIC = b"VXW1"


class GraphError(ValueError):
    """Structural problem with a graph (cycles, dangling references)."""


class GraphFormatError(ValueError):
    """A graph or weights file could not be parsed."""


def bias_name(weight: str) -> str:
    return weight + ".bias"


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    inputs: tuple[str, ...]
    attrs: Mapping[str, Any] = field(default_factory=dict)
    weight: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "attrs", dict(self.attrs))


def conv3d(id, x, out_ch, kernel, stride=(1, 1, 1), pad=(0, 0, 0), weight=None) -> Node:
    attrs = {"out_ch": int(out_ch), "kernel": _triple(kernel), "stride": _triple(stride), "pad": _triple(pad)}
    return Node(id, CONV3D, (x,), attrs, weight or f"{id}.w")


def conv2d(id, x, out_ch, kernel, stride=(1, 1), pad=(0, 0), weight=None) -> Node:
    attrs = {"out_ch": int(out_ch), "kernel": _pair(kernel), "stride": _pair(stride), "pad": _pair(pad)}
    return Node(id, CONV2D, (x,), attrs, weight or f"{id}.w")


def relu(id, x) -> Node:
    return Node(id, RELU, (x,))


def add(id, *xs) -> Node:
    return Node(id, ADD, xs)


def concat(id, xs, axis=1) -> Node:
    return Node(id, CONCAT, tuple(xs), {"axis": int(axis)})


def channel_slice(id, x, start, length) -> Node:
    return Node(id, CHANNEL_SLICE, (x,), {"start": int(start), "len": int(length)})


def upsample(id, x, fh, fw) -> Node:
    return Node(id, UPSAMPLE, (x,), {"fh": int(fh), "fw": int(fw)})


def _triple(v) -> list[int]:
    v = [int(v)] * 3 if np.isscalar(v) else [int(e) for e in v]
    if len(v) != 3:
        raise ValueError(f"expected 3 values, got {v}")
    return v


def _pair(v) -> list[int]:
    v = [int(v)] * 2 if np.isscalar(v) else [int(e) for e in v]
    if len(v) != 2:
        raise ValueError(f"expected 2 values, got {v}")
    return v


@dataclass
class Graph:
    inputs: dict[str, Shape]
    nodes: list[Node]
    outputs: list[str]
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    # per-tensor int8 scales, filled in by voxlow.quant.quantize
    quant: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = {k: tuple(int(d) for d in v) for k, v in self.inputs.items()}
        self.outputs = list(self.outputs)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def node_map(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def structurally_equal(self, other: "Graph") -> bool:
        if (self.inputs, self.outputs, self.nodes) != (other.inputs, other.outputs, other.nodes):
            return False
        if self.quant != other.quant or self.weights.keys() != other.weights.keys():
            return False
        return all(
            self.weights[k].shape == other.weights[k].shape
            and self.weights[k].tobytes() == other.weights[k].tobytes()
            for k in self.weights
        )


# -- shape inference -------------------------------------------------------


def _conv_extent(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def _attr_problems(n: Node) -> list[str]:
    a = n.attrs
    out = []
    try:
        if n.op in CONV_KINDS:
            nd = 3 if n.op == CONV3D else 2
            if a["out_ch"] < 1:
                out.append(f"node {n.id!r}: out_ch must be >= 1")
            for key, lo in (("kernel", 1), ("stride", 1), ("pad", 0)):
                vals = list(a[key])
                if len(vals) != nd or any(v < lo for v in vals):
                    out.append(f"node {n.id!r}: {key} must be {nd} values >= {lo}, got {vals}")
        elif n.op == CHANNEL_SLICE:
            if a["start"] < 0 or a["len"] < 1:
                out.append(f"node {n.id!r}: slice start must be >= 0 and len >= 1")
        elif n.op == UPSAMPLE:
            if a["fh"] < 1 or a["fw"] < 1:
                out.append(f"node {n.id!r}: upsample factors must be >= 1")
        elif n.op == CONCAT:
            int(a["axis"])
    except (KeyError, TypeError) as exc:
        out.append(f"node {n.id!r}: missing or malformed attribute {exc}")
    return out


def node_output_shape(n: Node, in_shapes: Sequence[Shape]) -> Shape:
    """Output shape of one node given its input shapes; raises ShapeError."""
    a = n.attrs
    if n.op in (RELU, ADD):
        first = in_shapes[0]
        for s in in_shapes[1:]:
            if s != first:
                raise ShapeError(f"node {n.id!r}: Add operands differ {first} vs {s}")
        return first
    if n.op in CONV_KINDS:
        (x,) = in_shapes
        nd = 3 if n.op == CONV3D else 2
        if len(x) != nd + 2:
            raise ShapeError(f"node {n.id!r}: {n.op} needs rank-{nd + 2} input, got {x}")
        spatial = tuple(
            _conv_extent(x[2 + i], a["kernel"][i], a["stride"][i], a["pad"][i]) for i in range(nd)
        )
        if any(e < 1 for e in spatial):
            raise ShapeError(f"node {n.id!r}: non-positive output extent {spatial} from input {x}")
        return (x[0], a["out_ch"]) + spatial
    if n.op == CONCAT:
        axis = a["axis"]
        first = in_shapes[0]
        if not 0 <= axis < len(first):
            raise ShapeError(f"node {n.id!r}: concat axis {axis} out of range for rank {len(first)}")
        total = 0
        for s in in_shapes:
            if len(s) != len(first) or any(s[i] != first[i] for i in range(len(s)) if i != axis):
                raise ShapeError(f"node {n.id!r}: concat operands {first} and {s} disagree off axis {axis}")
            total += s[axis]
        return first[:axis] + (total,) + first[axis + 1:]
    if n.op == CHANNEL_SLICE:
        (x,) = in_shapes
        if len(x) < 2 or a["start"] + a["len"] > x[1]:
            raise ShapeError(f"node {n.id!r}: slice [{a['start']}, {a['start'] + a['len']}) exceeds {x}")
        return (x[0], a["len"]) + x[2:]
    if n.op == UPSAMPLE:
        (x,) = in_shapes
        if len(x) not in (4, 5):
            raise ShapeError(f"node {n.id!r}: upsample needs rank 4 or 5, got {x}")
        return x[:-2] + (x[-2] * a["fh"], x[-1] * a["fw"])
    raise ShapeError(f"node {n.id!r}: unknown op {n.op!r}")


def _arity_ok(n: Node) -> bool:
    if n.op == ADD:
        return len(n.inputs) >= 2
    if n.op == CONCAT:
        return len(n.inputs) >= 1
    return len(n.inputs) == 1


def topo_order(g: Graph) -> list[str]:
    """Kahn's algorithm; ready nodes are released in lexicographic id order."""
    ids = {n.id for n in g.nodes}
    indeg = {n.id: 0 for n in g.nodes}
    users: dict[str, list[str]] = {}
    for n in g.nodes:
        for src in n.inputs:
            if src in ids:
                indeg[n.id] += 1
                users.setdefault(src, []).append(n.id)
    ready = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for u in users.get(nid, ()):
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(ready, u)
    if len(order) != len(ids):
        stuck = sorted(i for i, d in indeg.items() if d > 0)
        raise GraphError(f"cycle detected among nodes {stuck}")
    return order


def infer_shapes(g: Graph, input_shapes: Mapping[str, Sequence[int]] | None = None) -> dict[str, Shape]:
    """Shapes of every graph input and node output."""
    shapes: dict[str, Shape] = {
        k: as_shape(v) for k, v in (input_shapes if input_shapes is not None else g.inputs).items()
    }
    by_id = g.node_map
    for nid in topo_order(g):
        n = by_id[nid]
        try:
            ins = [shapes[i] for i in n.inputs]
        except KeyError as exc:
            raise ShapeError(f"node {nid!r}: input {exc.args[0]!r} has no shape") from None
        shapes[nid] = node_output_shape(n, ins)
    return shapes


def expected_weight_shape(n: Node, in_ch: int) -> Shape:
    return (n.attrs["out_ch"], in_ch) + tuple(n.attrs["kernel"])


def validate(g: Graph) -> list[str]:
    """Return every invariant violation found; an empty list means valid."""
    problems: list[str] = []
    seen: set[str] = set()
    for n in g.nodes:
        if n.id in seen:
            problems.append(f"duplicate node id {n.id!r}")
        if n.id in g.inputs:
            problems.append(f"node id {n.id!r} shadows a graph input")
        seen.add(n.id)
    for name, dims in g.inputs.items():
        try:
            as_shape(dims)
        except ShapeError as exc:
            problems.append(f"graph input {name!r}: {exc}")
    known = seen | set(g.inputs)
    for n in g.nodes:
        if n.op not in OP_KINDS:
            problems.append(f"node {n.id!r}: unknown op {n.op!r}")
            continue
        if not _arity_ok(n):
            problems.append(f"node {n.id!r}: wrong number of inputs ({len(n.inputs)}) for {n.op}")
        for src in n.inputs:
            if src not in known:
                problems.append(f"node {n.id!r}: dangling reference to {src!r}")
        problems.extend(_attr_problems(n))
        if n.op in CONV_KINDS and not n.weight:
            problems.append(f"node {n.id!r}: conv without weight reference")
    for out in g.outputs:
        if out not in known:
            problems.append(f"output {out!r} is not a node or input")
    if problems:
        return problems

    try:
        topo_order(g)
    except GraphError as exc:
        return [str(exc)]

    # reachability from graph inputs
    reach = set(g.inputs)
    for nid in topo_order(g):
        n = g.node(nid)
        if any(i in reach for i in n.inputs):
            reach.add(nid)
    for n in g.nodes:
        if n.id not in reach:
            problems.append(f"node {n.id!r} is not reachable from any graph input")

    try:
        shapes = infer_shapes(g)
    except ShapeError as exc:
        problems.append(f"shape inference failed: {exc}")
        return problems

    for n in g.nodes:
        if n.op not in CONV_KINDS:
            continue
        want = expected_weight_shape(n, shapes[n.inputs[0]][1])
        w = g.weights.get(n.weight)
        if w is None:
            problems.append(f"node {n.id!r}: weight {n.weight!r} missing")
        elif tuple(w.shape) != want:
            problems.append(f"node {n.id!r}: weight {n.weight!r} has shape {tuple(w.shape)}, expected {want}")
        b = g.weights.get(bias_name(n.weight))
        if b is None:
            problems.append(f"node {n.id!r}: bias {bias_name(n.weight)!r} missing")
        elif tuple(b.shape) != (n.attrs["out_ch"],):
            problems.append(f"node {n.id!r}: bias shape {tuple(b.shape)}, expected ({n.attrs['out_ch']},)")
    return problems


# -- weights blob ----------------------------------------------------------


def write_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named float32 tensors in the VXW1 binary format."""
    parts = [WEIGHTS_MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != WEIGHTS_MAGIC:
        raise GraphFormatError(f"{path}: bad magic {buf[:4]!r}, expected {WEIGHTS_MAGIC!r}")
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise GraphFormatError(f"{path}: truncated while reading {what}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "entry count"))
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"name length of entry {i}"))
        name = take(nlen, f"name of entry {i}").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"rank of weight {name!r}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of weight {name!r}"))
        n = int(np.prod(dims, dtype=np.int64))
        data = take(4 * n, f"data of weight {name!r}")
        out[name] = np.frombuffer(data, dtype="<f4").astype(DTYPE).reshape(dims)
    if pos != len(buf):
        raise GraphFormatError(f"{path}: {len(buf) - pos} trailing bytes after {count} entries")
    return out


# -- graph file ------------------------------------------------------------


def graph_to_json(g: Graph, weights_file: str) -> dict:
    doc = {
        "inputs": {k: list(v) for k, v in g.inputs.items()},
        "nodes": [
            {"id": n.id, "op": n.op, "attrs": dict(n.attrs), "inputs": list(n.inputs), "weight": n.weight}
            for n in g.nodes
        ],
        "outputs": list(g.outputs),
        "weights_file": weights_file,
    }
    if g.quant:
        doc["quant"] = dict(g.quant)
    return doc


def save_graph(g: Graph, path) -> None:
    problems = validate(g)
    if problems:
        raise GraphError("refusing to save invalid graph: " + "; ".join(problems))
    path = Path(path)
    weights_file = path.with_suffix(".vxw").name
    path.write_text(json.dumps(graph_to_json(g, weights_file), indent=1) + "\n", encoding="utf-8")
    write_tensors(path.parent / weights_file, g.weights)


def _field(obj: Mapping, key: str, kind, where: str):
    if not isinstance(obj, Mapping) or key not in obj:
        raise GraphFormatError(f"{where}: missing field {key!r}")
    val = obj[key]
    if not isinstance(val, kind):
        raise GraphFormatError(f"{where}: field {key!r} has type {type(val).__name__}")
    return val


def load_graph(path) -> Graph:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    where = str(path)
    inputs = _field(doc, "inputs", dict, where)
    nodes = []
    for i, nd in enumerate(_field(doc, "nodes", list, where)):
        at = f"{where}: nodes[{i}]"
        nodes.append(
            Node(
                id=_field(nd, "id", str, at),
                op=_field(nd, "op", str, at),
                inputs=tuple(_field(nd, "inputs", list, at)),
                attrs=nd.get("attrs") or {},
                weight=nd.get("weight"),
            )
        )
    outputs = _field(doc, "outputs", list, where)
    weights = {}
    wf = doc.get("weights_file")
    if wf:
        weights = read_tensors(path.parent / wf)
    try:
        g = Graph(inputs=inputs, nodes=nodes, outputs=outputs, weights=weights,
                  quant={k: float(v) for k, v in doc.get("quant", {}).items()})
    except (TypeError, ValueError) as exc:
        raise GraphFormatError(f"{where}: {exc}") from None
    return g
