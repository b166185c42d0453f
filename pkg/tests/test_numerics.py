import json
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from melstm.numerics import (
    DimensionError, GradSlot, NumericError, Rng, elementwise, fast_sigmoid, finite_diff_grad,
    init_uniform, matmul, relative_error, sigmoid, softmax,
)


def naive_matmul(a, b):
    out = [[0.0] * len(b[0]) for _ in range(len(a))]
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


def test_matmul_identity_and_hand_case():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)
    assert np.array_equal(matmul([[1.0, 2.0]], [[3.0], [4.0]]), [[11.0]])


def test_matmul_against_triple_loop():
    rng = Rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.allclose(matmul(a, b), naive_matmul(a.tolist(), b.tolist()), rtol=1e-12, atol=0)
    for seed in range(5):
        r = Rng(seed)
        a, b = r.normal(size=(8, 8)), r.normal(size=(8, 8))
        assert relative_error(matmul(a, b), naive_matmul(a.tolist(), b.tolist())).max() < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match="2x3.*2x3"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_elementwise_cases():
    assert sigmoid(np.array(0.0)) == 0.5
    assert elementwise("tanh", [0.0]) == [0.0]
    assert np.array_equal(elementwise("mul", [1.0, 2.0], [3.0, 4.0]), [3.0, 8.0])
    assert np.array_equal(elementwise("sub", [1.0], [3.0]), [-2.0])
    with pytest.raises(DimensionError):
        elementwise("add", [1.0, 2.0], [1.0])


def test_sigmoid_is_stable_and_bounded():
    x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert np.all((s >= 0) & (s <= 1))
    mid = np.linspace(-20, 20, 81)
    assert np.all((sigmoid(mid) > 0) & (sigmoid(mid) < 1))
    assert np.allclose(fast_sigmoid(mid), 1 / (1 + np.exp(-mid)), rtol=1e-14, atol=1e-16)


def test_init_uniform_bounds_determinism_and_mean():
    a = init_uniform(Rng(0), 100, 100, 0.1)
    b = init_uniform(Rng(0), 100, 100, 0.1)
    assert np.array_equal(a, b)
    assert a.min() >= -0.1 and a.max() <= 0.1
    # value pinned for this seed; well inside the 0.01 band around zero
    assert a.mean() == pytest.approx(0.00022421497647784108, abs=1e-15)
    assert abs(a.mean()) < 0.01


def test_rng_state_round_trip_through_json():
    r = Rng(11)
    r.uniform(0, 1, 5)
    saved = json.loads(json.dumps(r.get_state()))
    expected = r.uniform(0, 1, 7)
    again = Rng.from_state(saved)
    assert np.array_equal(again.uniform(0, 1, 7), expected)


def test_rng_spawn_is_deterministic_and_distinct():
    assert np.array_equal(Rng(5).spawn(1).random(4), Rng(5).spawn(1).random(4))
    assert not np.array_equal(Rng(5).spawn(1).random(4), Rng(5).spawn(2).random(4))


def test_gradslot_shapes():
    s = GradSlot(np.ones((2, 3)))
    assert s.value.shape == s.grad.shape == s.accum.shape == (2, 3)
    assert s.value.dtype == np.float64 and np.all(s.accum >= 0)


def test_softmax_cases():
    assert np.allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)
    big = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] < 1e-300 + 1e-400
    with pytest.raises(NumericError):
        softmax([np.nan, 1.0])


def test_softmax_matches_high_precision_oracle():
    getcontext().prec = 50
    exps = [Decimal(v).exp() for v in (1, 2, 3)]
    total = sum(exps)
    oracle = [float(e / total) for e in exps]
    assert np.allclose(softmax([1.0, 2.0, 3.0]), oracle, rtol=1e-14, atol=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(v, c):
    v = np.array(v)
    p = softmax(v)
    assert abs(p.sum() - 1.0) < 1e-12 and np.all(p > 0)
    assert np.allclose(softmax(v + c), p, atol=1e-12, rtol=0)


def test_finite_diff_square_and_constant():
    x = np.array([3.0])
    g = finite_diff_grad(lambda: float(x[0] ** 2), {"x": x}, 1e-5)
    assert abs(g["x"][0] - 6.0) < 1e-6
    assert x[0] == 3.0
    y = np.array([1.0, 2.0])
    assert np.array_equal(finite_diff_grad(lambda: 4.0, {"y": y})["y"], [0.0, 0.0])


def test_finite_diff_errors():
    x = np.array([0.0, 1.0])
    with pytest.raises(ValueError):
        finite_diff_grad(lambda: 0.0, {"x": x}, 1e-2)
    with pytest.raises(NumericError, match=r"x\[1\]"):
        finite_diff_grad(lambda: float("inf") if x[1] != 1.0 else 0.0, {"x": x}, 1e-5)


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-9, 0.0) == pytest.approx(0.1)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
