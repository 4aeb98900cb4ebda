"""Per-tensor symmetric int8 calibration for rank-4 graphs."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .executor import QMAX, run_graph
from .graph import CONV_KINDS, Graph
from .lowering import check_rank4
from .tensor import max_abs_diff

log = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8


@dataclass
class QuantReport:
    scales: dict[str, float] = field(default_factory=dict)
    output_max_abs_diff: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def symmetric_scale(max_abs: float) -> float:
    return float(max_abs) / QMAX


def quantize(g4: Graph, calibration: Sequence[Mapping[str, np.ndarray]]) -> tuple[Graph, QuantReport]:
    """Annotate ``g4`` with int8 scales observed over ``calibration``.

    Activation scales cover the max-abs of every graph input and node
    output; weight scales cover each conv weight. The report compares
    simulated int8 execution against float on the same calibration sets.
    """
    violations = check_rank4(g4)
    if violations:
        raise ValueError("quantize needs a rank-4 graph: " + "; ".join(violations))
    if not calibration:
        raise ValueError("calibration set is empty")

    peaks: dict[str, float] = {}

    def observe(name: str, value: np.ndarray) -> None:
        peaks[name] = max(peaks.get(name, 0.0), float(np.max(np.abs(value))) if value.size else 0.0)

    for feeds in calibration:
        run_graph(g4, feeds, hook=observe)
    for n in g4.nodes:
        if n.op in CONV_KINDS:
            peaks[n.weight] = float(np.max(np.abs(g4.weights[n.weight])))

    rep = QuantReport()
    for name, peak in peaks.items():
        scale = symmetric_scale(peak)
        if scale < SCALE_FLOOR:
            msg = f"tensor {name!r} is all zeros over calibration; scale floored to {SCALE_FLOOR:g}"
            log.warning(msg)
            rep.warnings.append(msg)
            scale = SCALE_FLOOR
        rep.scales[name] = scale

    gq = dataclasses.replace(g4, weights=dict(g4.weights), quant=dict(rep.scales))
    for feeds in calibration:
        ref = run_graph(g4, feeds)
        got = run_graph(gq, feeds, quantized=True)
        for o in g4.outputs:
            d = max_abs_diff(ref.outputs[o], got.outputs[o])
            rep.output_max_abs_diff[o] = max(rep.output_max_abs_diff.get(o, 0.0), d)
    return gq, rep
