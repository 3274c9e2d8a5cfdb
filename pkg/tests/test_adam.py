"""Adam update semantics against an independently coded reference."""

import numpy as np
import pytest

import lixelkit.diffcore as dc
from lixelkit.diffcore import AdamState, OptimError, Tensor, adam_step


def test_zero_gradient_leaves_params_and_increments_step():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.zeros(2)}
    state = AdamState(lr=0.1)
    adam_step(p, g, state)
    assert np.array_equal(p["w"], [1.0, -2.0])
    assert state.step == 1


def test_constant_gradient_moves_opposite_sign():
    p = {"w": np.array([0.0])}
    state = AdamState(lr=0.01)
    for _ in range(20):
        adam_step(p, {"w": np.array([1.0])}, state)
    assert p["w"][0] < 0
    p2 = {"w": np.array([0.0])}
    state2 = AdamState(lr=0.01)
    for _ in range(20):
        adam_step(p2, {"w": np.array([-1.0])}, state2)
    assert p2["w"][0] > 0


def test_three_steps_match_manual_sequence():
    # independent spreadsheet-style recomputation of the bias-corrected
    # update for a single scalar with g = 1 throughout
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    theta, m, v = 0.0, 0.0, 0.0
    expected = []
    for t in range(1, 4):
        m = b1 * m + (1 - b1) * 1.0
        v = b2 * v + (1 - b2) * 1.0
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        expected.append(theta)

    p = {"w": np.array([0.0])}
    state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
    got = []
    for _ in range(3):
        adam_step(p, {"w": np.array([1.0])}, state)
        got.append(p["w"][0])
    assert np.allclose(got, expected, atol=1e-15)


def test_nan_gradient_raises_naming_parameter():
    p = {"conv.weight": np.array([1.0])}
    state = AdamState()
    with pytest.raises(OptimError, match="conv.weight"):
        adam_step(p, {"conv.weight": np.array([np.nan])}, state)


def test_shape_mismatch_raises():
    p = {"w": np.zeros(3)}
    state = AdamState()
    with pytest.raises(OptimError, match="shape"):
        adam_step(p, {"w": np.zeros(2)}, state)


def test_deterministic_given_identical_inputs():
    def run():
        p = {"w": np.array([0.3, -0.7])}
        state = AdamState(lr=0.05)
        for i in range(5):
            adam_step(p, {"w": np.array([1.0, -2.0]) * (i + 1)}, state)
        return p["w"].copy()

    assert np.array_equal(run(), run())


def test_adam_wrapper_descends_a_quadratic():
    x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = dc.Adam({"x": x}, lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        loss = dc.tsum(dc.mul(x, x))
        loss.backward()
        opt.step()
    assert np.abs(x.data).max() < 0.2
