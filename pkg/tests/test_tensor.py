import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oocgraph.errors import LabelIndexError, ShapeError
from oocgraph.tensor import cross_entropy, matmul, softmax_rows


def naive_matmul(a, b):
    out = [[0.0] * len(b[0]) for _ in a]
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), m), m)


def test_matmul_hand_example():
    assert matmul(np.array([[1.0, 2], [3, 4]]), np.array([[0.0], [1]])).tolist() == [[2.0], [4.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a.tolist(), b.tolist()), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b, c = rng.normal(size=(4, 5)), rng.normal(size=(5, 6)), rng.normal(size=(6, 3))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-9 * max(1.0, np.max(np.abs(left)))


def test_softmax_uniform():
    np.testing.assert_allclose(softmax_rows(np.zeros((1, 4))), [[0.25] * 4])


def test_softmax_shift_invariance():
    t = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(softmax_rows(t + 17.5), softmax_rows(t), atol=1e-15)


def test_softmax_no_overflow():
    p = softmax_rows(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(p))
    assert p.sum() == 1.0
    # Extended-precision oracle: the true value of the small entry is far below
    # the smallest subnormal double, so it must round to exactly zero.
    mp.mp.dps = 50
    small = mp.exp(-1000) / (1 + mp.exp(-1000))
    assert small < mp.mpf(2) ** -1075
    assert p[0, 0] == 1.0 and p[0, 1] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=6))
def test_softmax_matches_extended_precision(row):
    mp.mp.dps = 40
    exps = [mp.exp(mp.mpf(v)) for v in row]
    total = mp.fsum(exps)
    expect = [float(e / total) for e in exps]
    np.testing.assert_allclose(softmax_rows(np.array([row]))[0], expect, rtol=1e-13, atol=1e-300)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_softmax_rows_normalized(x):
    p = softmax_rows(x)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_cross_entropy_perfect_and_uniform():
    loss, _ = cross_entropy(np.eye(3), [0, 1, 2])
    assert loss == 0.0
    loss, _ = cross_entropy(np.full((2, 5), 0.2), [1, 4])
    assert loss == pytest.approx(math.log(5), abs=1e-12)


def test_cross_entropy_floor_keeps_loss_finite():
    loss, _ = cross_entropy(np.array([[1.0, 0.0]]), [1])
    assert loss == pytest.approx(-math.log(1e-12))


def test_cross_entropy_target_out_of_range():
    with pytest.raises(LabelIndexError):
        cross_entropy(np.full((1, 3), 1 / 3), [3])


def _ce_of_logits(z, y):
    return cross_entropy(softmax_rows(z), y)[0]


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(6, 5))
    y = rng.integers(0, 5, size=6)
    _, g = cross_entropy(softmax_rows(z), y)
    h = 1e-4
    num = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        num[idx] = (_ce_of_logits(zp, y) - _ce_of_logits(zm, y)) / (2 * h)
    rel = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-8)
    assert rel.max() < 1e-5
