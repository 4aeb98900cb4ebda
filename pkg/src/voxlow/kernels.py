"""Hot-loop kernels, compiled when available.

The Cython extension ``voxlow._ckernels`` is used if it imports; otherwise
the numpy implementation in ``voxlow._pykernels`` is. Set
``VOXLOW_PURE_PYTHON=1`` before import to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("VOXLOW_PURE_PYTHON"):
        raise ImportError("fallback forced by VOXLOW_PURE_PYTHON")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

BACKENDS = {"python": _pykernels}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl


def _f32(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float32)


def conv3d(x, w, bias, stride=(1, 1, 1), pad=(0, 0, 0), backend=None):
    impl = BACKENDS[backend] if backend else _impl
    return impl.conv3d(_f32(x), _f32(w), _f32(bias), tuple(stride), tuple(pad))


def conv2d(x, w, bias, stride=(1, 1), pad=(0, 0), backend=None):
    impl = BACKENDS[backend] if backend else _impl
    return impl.conv2d(_f32(x), _f32(w), _f32(bias), tuple(stride), tuple(pad))


def convex_intersection_area(subject, clip, backend=None) -> float:
    impl = BACKENDS[backend] if backend else _impl
    if impl is _pykernels:
        return _pykernels.convex_intersection_area(subject, clip)
    return impl.convex_intersection_area(
        np.ascontiguousarray(subject, dtype=np.float64), np.ascontiguousarray(clip, dtype=np.float64)
    )
