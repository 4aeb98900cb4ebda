"""Pure numpy fallback for the compiled kernels in ``_ckernels.pyx``.

The convolutions loop over (channel, depth tap, row tap, column tap) and
accumulate whole output planes in float64, which reproduces the compiled
reduction order element for element.
"""
from __future__ import annotations

import numpy as np


def _padded(x: np.ndarray, pads) -> np.ndarray:
    width = [(0, 0), (0, 0)] + [(p, p) for p in pads]
    return np.pad(x.astype(np.float64), width)


def conv3d(x, w, bias, stride, pad):
    B, C, D, H, W = x.shape
    O, _, KD, KH, KW = w.shape
    sd, sh, sw = stride
    OD = (D + 2 * pad[0] - KD) // sd + 1
    OH = (H + 2 * pad[1] - KH) // sh + 1
    OW = (W + 2 * pad[2] - KW) // sw + 1
    xp = _padded(x, pad)
    w64 = w.astype(np.float64)
    acc = np.zeros((B, O, OD, OH, OW))
    for c in range(C):
        for i in range(KD):
            for j in range(KH):
                for k in range(KW):
                    win = xp[:, c, i:i + sd * (OD - 1) + 1:sd, j:j + sh * (OH - 1) + 1:sh, k:k + sw * (OW - 1) + 1:sw]
                    acc += win[:, None] * w64[:, c, i, j, k][None, :, None, None, None]
    acc += bias.astype(np.float64)[None, :, None, None, None]
    return acc.astype(np.float32)


def conv2d(x, w, bias, stride, pad):
    B, C, H, W = x.shape
    O, _, KH, KW = w.shape
    sh, sw = stride
    OH = (H + 2 * pad[0] - KH) // sh + 1
    OW = (W + 2 * pad[1] - KW) // sw + 1
    xp = _padded(x, pad)
    w64 = w.astype(np.float64)
    acc = np.zeros((B, O, OH, OW))
    for c in range(C):
        for j in range(KH):
            for k in range(KW):
                win = xp[:, c, j:j + sh * (OH - 1) + 1:sh, k:k + sw * (OW - 1) + 1:sw]
                acc += win[:, None] * w64[:, c, j, k][None, :, None, None]
    acc += bias.astype(np.float64)[None, :, None, None]
    return acc.astype(np.float32)


def clip_polygon(subject, clip):
    """Sutherland-Hodgman: ``subject`` clipped by convex ccw ``clip``.

    A vertex is inside an edge only when strictly left of it, so polygons
    that merely touch produce a degenerate (zero-area) result.
    """
    out = [tuple(p) for p in subject]
    m = len(clip)
    for e in range(m):
        if not out:
            break
        ax, ay = clip[e]
        bx, by = clip[(e + 1) % m]
        src, out = out, []
        sx, sy = src[-1]
        cs = (bx - ax) * (sy - ay) - (by - ay) * (sx - ax)
        for ex, ey in src:
            ce = (bx - ax) * (ey - ay) - (by - ay) * (ex - ax)
            if ce > 0.0:
                if cs <= 0.0:
                    t = cs / (cs - ce)
                    out.append((sx + t * (ex - sx), sy + t * (ey - sy)))
                out.append((ex, ey))
            elif cs > 0.0:
                t = cs / (cs - ce)
                out.append((sx + t * (ex - sx), sy + t * (ey - sy)))
            sx, sy, cs = ex, ey, ce
    return out


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counterclockwise)."""
    n = len(poly)
    if n < 3:
        return 0.0
    s = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def convex_intersection_area(subject, clip) -> float:
    area = polygon_area(clip_polygon(subject, clip))
    return area if area >= 1e-12 else 0.0
