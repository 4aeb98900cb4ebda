import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxlow.tensor import (
    ShapeError,
    fold_depth,
    from_channels_last,
    inverse_perm,
    max_abs_diff,
    reshape,
    tensor,
    to_channels_last,
    transpose,
    unfold_depth,
    zeros,
)


def test_reshape_5d_to_channels_last_extents():
    t = tensor(np.arange(1024), (1, 4, 8, 8, 4))
    r = reshape(t, (1, 8, 8, 16))
    assert r.shape == (1, 8, 8, 16)
    assert r.size == t.size == 1024
    assert np.array_equal(r.ravel(), t.ravel())


def test_reshape_identity_bitwise():
    t = tensor([[1.5, -2.0, 3.25], [0.0, 7.0, -0.5]])
    assert reshape(t, (2, 3)).tobytes() == t.tobytes()


def test_reshape_count_mismatch():
    with pytest.raises(ShapeError):
        reshape(zeros((2, 3)), (4, 2))


def test_reshape_round_trip():
    t = tensor(np.random.default_rng(0).normal(size=60), (3, 4, 5))
    assert reshape(reshape(t, (6, 10)), (3, 4, 5)).tobytes() == t.tobytes()


def test_transpose_axis_swap():
    t = tensor(np.arange(6), (1, 2, 3))
    out = transpose(t, (0, 2, 1))
    assert out.shape == (1, 3, 2)
    for i, j in itertools.product(range(2), range(3)):
        assert out[0, j, i] == t[0, i, j]


def test_transpose_identity():
    t = tensor(np.arange(24), (2, 3, 4))
    assert transpose(t, (0, 1, 2)).tobytes() == t.tobytes()


def test_transpose_round_trip_against_index_walk():
    rng = np.random.default_rng(3)
    t = tensor(rng.normal(size=(2, 3, 4, 5)))
    perm = (3, 1, 0, 2)
    out = transpose(t, perm)
    inv = [0] * 4
    for i, p in enumerate(perm):
        inv[p] = i
    # out[idx] == in[idx permuted back]
    for idx in itertools.product(*(range(s) for s in out.shape)):
        src = [0] * 4
        for k, p in enumerate(perm):
            src[p] = idx[k]
        assert out[idx] == t[tuple(src)]
    assert np.array_equal(transpose(out, inverse_perm(perm)), t)


def test_transpose_rejects_bad_perm():
    with pytest.raises(ShapeError):
        transpose(zeros((2, 3)), (0, 0))


def test_fold_depth_extents_and_index():
    t = zeros((1, 2, 3, 4, 5))
    assert fold_depth(t).shape == (1, 6, 4, 5)
    t = zeros((1, 2, 3, 1, 1))
    t[0, 1, 2, 0, 0] = 7.0
    assert fold_depth(t)[0, 5, 0, 0] == 7.0


def test_fold_depth_matches_explicit_loop():
    rng = np.random.default_rng(9)
    t = tensor(rng.normal(size=(2, 3, 4, 2, 3)))
    f = fold_depth(t)
    for b, c, d, h, w in itertools.product(*(range(s) for s in t.shape)):
        assert f[b, c * 4 + d, h, w] == t[b, c, d, h, w]


def test_fold_depth_rank_error():
    with pytest.raises(ShapeError):
        fold_depth(zeros((1, 2, 3, 4)))


def test_unfold_depth():
    assert unfold_depth(zeros((1, 6, 4, 5)), 2, 3).shape == (1, 2, 3, 4, 5)
    z = zeros((1, 2, 3, 4, 5))
    assert not unfold_depth(fold_depth(z), 2, 3).any()
    with pytest.raises(ShapeError):
        unfold_depth(zeros((1, 7, 4, 5)), 2, 3)


def test_unfold_fold_round_trip_many():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        shape = tuple(int(v) for v in rng.integers(1, 5, size=5))
        t = tensor(rng.normal(size=shape))
        back = unfold_depth(fold_depth(t), shape[1], shape[2])
        assert back.tobytes() == t.tobytes()


@settings(max_examples=60, deadline=None)
@given(
    c=st.integers(1, 8),
    d=st.integers(1, 8),
    h=st.integers(1, 4),
    w=st.integers(1, 4),
    seed=st.integers(0, 2**31 - 1),
)
def test_fold_bijection_property(c, d, h, w, seed):
    t = tensor(np.random.default_rng(seed).normal(size=(1, c, d, h, w)))
    f = fold_depth(t)
    assert f.shape == (1, c * d, h, w)
    assert np.array_equal(unfold_depth(f, c, d), t)
    # distinct source indices land on distinct folded indices
    ids = tensor(np.arange(t.size), t.shape)
    assert len(np.unique(fold_depth(ids))) == t.size


def test_channels_last_round_trip():
    t = tensor(np.arange(2 * 6 * 3 * 4), (2, 6, 3, 4))
    cl = to_channels_last(t)
    assert cl.shape == (2, 3, 4, 6)
    assert np.array_equal(from_channels_last(cl), t)


def test_max_abs_diff():
    a = zeros((2, 2))
    assert max_abs_diff(a, a) == 0.0
    b = a.copy()
    b[1, 0] = 0.5
    assert max_abs_diff(a, b) == 0.5
    with pytest.raises(ShapeError):
        max_abs_diff(a, zeros((4,)))


def test_max_abs_diff_vs_scalar_loop():
    rng = np.random.default_rng(5)
    a = tensor(rng.normal(size=(3, 4, 5)))
    b = tensor(rng.normal(size=(3, 4, 5)))
    worst = 0.0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        worst = max(worst, abs(x - y))
    assert max_abs_diff(a, b) == worst
