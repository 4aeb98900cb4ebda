"""Dense float32 tensors and the depth-folding rearrangement.

Tensors are plain C-contiguous ``numpy.float32`` arrays. Compute layout is
channels-first: ``(B, C, D, H, W)`` for volumes and ``(B, C, H, W)`` for
planes. Folding merges channel and depth into one channel axis using the
c-major index ``c * D + d``.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float32
MAX_RANK = 5

Shape = tuple[int, ...]


class ShapeError(ValueError):
    """Raised on any rank, extent or element-count mismatch."""


def as_shape(dims: Iterable[int]) -> Shape:
    shape = tuple(int(d) for d in dims)
    if not 1 <= len(shape) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got {len(shape)}")
    if any(d < 1 for d in shape):
        raise ShapeError(f"extents must be >= 1, got {shape}")
    return shape


def numel(shape: Sequence[int]) -> int:
    return int(np.prod(shape, dtype=np.int64))


def tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Build a float32 C-contiguous tensor, optionally reshaped to ``shape``."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        arr = reshape(arr, shape)
    return arr


def zeros(shape: Sequence[int]) -> np.ndarray:
    return np.zeros(as_shape(shape), dtype=DTYPE)


def reshape(t: np.ndarray, new: Sequence[int]) -> np.ndarray:
    new = as_shape(new)
    if numel(new) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {new} ({numel(new)} elements)")
    return np.ascontiguousarray(t).reshape(new)


def transpose(t: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(t.ndim)):
        raise ShapeError(f"{perm} is not a permutation of 0..{t.ndim - 1}")
    return np.ascontiguousarray(np.transpose(t, perm))


def inverse_perm(perm: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def fold_depth(t: np.ndarray) -> np.ndarray:
    """``(B, C, D, H, W) -> (B, C*D, H, W)`` with folded channel ``c*D + d``."""
    if t.ndim != 5:
        raise ShapeError(f"fold_depth needs a rank-5 tensor, got rank {t.ndim}")
    b, c, d, h, w = t.shape
    # row-major: merging adjacent axes (C, D) is exactly the c-major fold
    return np.ascontiguousarray(t).reshape(b, c * d, h, w)


def unfold_depth(t: np.ndarray, c: int, d: int) -> np.ndarray:
    if t.ndim != 4:
        raise ShapeError(f"unfold_depth needs a rank-4 tensor, got rank {t.ndim}")
    if c < 1 or d < 1 or t.shape[1] != c * d:
        raise ShapeError(f"channel extent {t.shape[1]} is not {c}*{d}")
    b, _, h, w = t.shape
    return np.ascontiguousarray(t).reshape(b, c, d, h, w)


def to_channels_last(t: np.ndarray) -> np.ndarray:
    """Folded ``(B, C*D, H, W)`` to the accelerator I/O layout ``(B, H, W, C*D)``."""
    if t.ndim != 4:
        raise ShapeError(f"expected rank 4, got {t.ndim}")
    return transpose(t, (0, 2, 3, 1))


def from_channels_last(t: np.ndarray) -> np.ndarray:
    if t.ndim != 4:
        raise ShapeError(f"expected rank 4, got {t.ndim}")
    return transpose(t, (0, 3, 1, 2))


def max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))
