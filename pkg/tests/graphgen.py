"""Random rank-5 graphs drawn from the op set the lowering supports."""
from __future__ import annotations

import numpy as np

from voxlow import graph as G

MAX_C = 8
MAX_D = 8
MAX_HW = 16


def _conv_weights(rng, out_ch, in_ch, kernel):
    fan_in = in_ch * int(np.prod(kernel))
    w = rng.uniform(-1, 1, (out_ch, in_ch, *kernel)) / np.sqrt(fan_in)
    b = rng.uniform(-0.5, 0.5, out_ch)
    return w.astype(np.float32), b.astype(np.float32)


def random_graph(rng: np.random.Generator, max_layers: int = 5, full_depth_only: bool = False) -> G.Graph:
    """A random graph with one rank-5 input and up to ``max_layers`` ops.

    With ``full_depth_only`` every Conv3D has a kernel spanning its whole
    input depth with unit stride and no depth padding.
    """
    C = int(rng.integers(1, MAX_C + 1))
    D = int(rng.integers(1, MAX_D + 1))
    H = int(rng.integers(2, MAX_HW + 1))
    W = int(rng.integers(2, MAX_HW + 1))
    shapes: dict[str, tuple] = {"x": (1, C, D, H, W)}
    nodes: list[G.Node] = []
    weights: dict[str, np.ndarray] = {}
    cur = "x"
    n_layers = int(rng.integers(1, max_layers + 1))
    ops = ["conv", "relu", "add", "concat", "upsample", "slice"]
    for li in range(n_layers):
        nid = f"n{li}"
        s = shapes[cur]
        op = "conv" if li == 0 else str(rng.choice(ops, p=[0.4, 0.15, 0.15, 0.12, 0.1, 0.08]))
        if op == "conv":
            _, c, d, h, w = s
            out_ch = int(rng.integers(1, MAX_C + 1))
            if full_depth_only:
                kd, sd, pd = d, 1, 0
            else:
                kd = int(rng.integers(1, min(3, d + 2) + 1))
                pd = int(rng.integers(0, kd))
                sd = int(rng.choice([1, 1, 2]))
                if (d + 2 * pd - kd) < 0:
                    pd = kd - 1
            kh = int(rng.choice([1, 3]))
            kw = int(rng.choice([1, 3]))
            ph, pw = kh // 2, kw // 2
            sh = int(rng.choice([1, 1, 2]))
            sw = int(rng.choice([1, 1, 2]))
            node = G.conv3d(nid, cur, out_ch, (kd, kh, kw), (sd, sh, sw), (pd, ph, pw))
            wt, bs = _conv_weights(rng, out_ch, c, (kd, kh, kw))
            weights[node.weight] = wt
            weights[G.bias_name(node.weight)] = bs
        elif op == "relu":
            node = G.relu(nid, cur)
        elif op == "add":
            same = [k for k, v in shapes.items() if v == s and k != cur]
            other = str(rng.choice(same)) if same else cur
            node = G.add(nid, cur, other)
        elif op == "concat":
            mates = [k for k, v in shapes.items() if v[2:] == s[2:] and v[1] + s[1] <= MAX_C]
            if not mates:
                node = G.relu(nid, cur)
            else:
                node = G.concat(nid, [cur, str(rng.choice(mates))], axis=1)
        elif op == "upsample":
            fh = 2 if s[3] * 2 <= MAX_HW else 1
            fw = 2 if s[4] * 2 <= MAX_HW else 1
            node = G.upsample(nid, cur, fh, fw)
        else:
            c = s[1]
            start = int(rng.integers(0, c))
            node = G.channel_slice(nid, cur, start, int(rng.integers(1, c - start + 1)))
        nodes.append(node)
        shapes[nid] = G.node_output_shape(node, [shapes[i] for i in node.inputs])
        cur = nid
    outputs = [cur]
    if len(nodes) > 2 and rng.random() < 0.3:
        outputs.append(nodes[0].id)
    return G.Graph({"x": (1, C, D, H, W)}, nodes, outputs, weights)


def graph_ops(g: G.Graph) -> set[str]:
    return {n.op for n in g.nodes}
