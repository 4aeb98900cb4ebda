"""Reference interpreter for rank-4 and rank-5 graphs."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import kernels
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
    topo_order,
)
from .tensor import DTYPE, ShapeError

QMAX = 127

NodeHook = Callable[[str, np.ndarray], None]


class ExecutionError(RuntimeError):
    def __init__(self, node_id: str, msg: str):
        super().__init__(f"node {node_id!r}: {msg}")
        self.node_id = node_id


@dataclass
class ExecResult:
    outputs: dict[str, np.ndarray]
    node_times: dict[str, float] = field(default_factory=dict)


def quantize_int(x: np.ndarray, scale: float) -> np.ndarray:
    """Symmetric int8 codes (held as float32) for ``x`` at ``scale``."""
    return np.clip(np.rint(x.astype(np.float64) / scale), -QMAX, QMAX).astype(DTYPE)


def fake_quant(x: np.ndarray, scale: float) -> np.ndarray:
    return (quantize_int(x, scale).astype(np.float64) * scale).astype(DTYPE)


def conv3d(x, w, bias, stride=(1, 1, 1), pad=(0, 0, 0)) -> np.ndarray:
    """Direct 3D convolution with zero padding; ``x`` is (B, C, D, H, W)."""
    if x.ndim != 5 or w.ndim != 5 or x.shape[1] != w.shape[1] or bias.shape != (w.shape[0],):
        raise ShapeError(f"conv3d shapes disagree: x {x.shape}, w {w.shape}, bias {bias.shape}")
    _check_extents(x.shape[2:], w.shape[2:], stride, pad)
    return kernels.conv3d(x, w, bias, stride, pad)


def conv2d(x, w, bias, stride=(1, 1), pad=(0, 0)) -> np.ndarray:
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or bias.shape != (w.shape[0],):
        raise ShapeError(f"conv2d shapes disagree: x {x.shape}, w {w.shape}, bias {bias.shape}")
    _check_extents(x.shape[2:], w.shape[2:], stride, pad)
    return kernels.conv2d(x, w, bias, stride, pad)


def _check_extents(size, k, s, p):
    for n, kk, ss, pp in zip(size, k, s, p):
        if (n + 2 * pp - kk) // ss + 1 < 1:
            raise ShapeError(f"kernel {tuple(k)} with pad {tuple(p)} does not fit input extents {tuple(size)}")


def _upsample(x: np.ndarray, fh: int, fw: int) -> np.ndarray:
    return np.ascontiguousarray(np.repeat(np.repeat(x, fh, axis=-2), fw, axis=-1))


def _eval_node(g: Graph, n: Node, args: list[np.ndarray], quantized: bool) -> np.ndarray:
    a = n.attrs
    if n.op in (CONV3D, CONV2D):
        fn = conv3d if n.op == CONV3D else conv2d
        w = g.weights[n.weight]
        b = g.weights[bias_name(n.weight)]
        (x,) = args
        if quantized:
            sx = g.quant[n.inputs[0]]
            sw = g.quant[n.weight]
            acc = fn(quantize_int(x, sx), quantize_int(w, sw), np.zeros_like(b), a["stride"], a["pad"])
            shape = (1, -1) + (1,) * (acc.ndim - 2)
            return (acc.astype(np.float64) * (sx * sw) + b.astype(np.float64).reshape(shape)).astype(DTYPE)
        return fn(x, w, b, a["stride"], a["pad"])
    if n.op == RELU:
        return np.maximum(args[0], DTYPE(0))
    if n.op == ADD:
        first = args[0]
        for other in args[1:]:
            if other.shape != first.shape:
                raise ShapeError(f"Add operands differ {first.shape} vs {other.shape}")
        acc = first.copy()
        for other in args[1:]:
            acc += other
        return acc
    if n.op == CONCAT:
        return np.ascontiguousarray(np.concatenate(args, axis=a["axis"]))
    if n.op == CHANNEL_SLICE:
        (x,) = args
        if a["start"] + a["len"] > x.shape[1]:
            raise ShapeError(f"slice [{a['start']}, {a['start'] + a['len']}) exceeds {x.shape[1]} channels")
        return np.ascontiguousarray(x[:, a["start"]:a["start"] + a["len"]])
    if n.op == UPSAMPLE:
        return _upsample(args[0], a["fh"], a["fw"])
    raise ShapeError(f"unknown op {n.op!r}")


def run_graph(
    g: Graph,
    inputs: Mapping[str, np.ndarray],
    *,
    outputs=None,
    quantized: bool = False,
    hook: NodeHook | None = None,
) -> ExecResult:
    """Execute ``g`` in topological order.

    ``hook(name, value)`` is called for every graph input and node result;
    ``quantized`` simulates per-tensor int8 execution using ``g.quant``.
    """
    if quantized and not g.quant:
        raise ValueError("quantized execution needs a graph annotated by voxlow.quant.quantize")
    env: dict[str, np.ndarray] = {}
    for name, shape in g.inputs.items():
        if name not in inputs:
            raise ExecutionError(name, "missing graph input")
        x = np.ascontiguousarray(inputs[name], dtype=DTYPE)
        if x.shape != tuple(shape):
            raise ExecutionError(name, f"input shape {x.shape} does not match declared {tuple(shape)}")
        if quantized:
            x = fake_quant(x, g.quant[name])
        env[name] = x
        if hook:
            hook(name, x)
    times: dict[str, float] = {}
    by_id = g.node_map
    for nid in topo_order(g):
        n = by_id[nid]
        t0 = time.perf_counter()
        try:
            y = _eval_node(g, n, [env[i] for i in n.inputs], quantized)
        except (ShapeError, KeyError, ValueError) as exc:
            raise ExecutionError(nid, str(exc)) from exc
        if quantized:
            y = fake_quant(y, g.quant[nid])
        times[nid] = time.perf_counter() - t0
        env[nid] = y
        if hook:
            hook(nid, y)
    wanted = g.outputs if outputs is None else list(outputs)
    return ExecResult({o: env[o] for o in wanted}, times)
