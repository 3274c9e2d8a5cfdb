"""Forward-value checks of the tensor primitives against direct oracles."""

import numpy as np
import pytest

import lixelkit.diffcore as dc
from lixelkit.diffcore import ShapeError, Tensor


def conv2d_reference(x, w, stride, padding):
    """Direct-summation convolution oracle (quadruple loop)."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    OH = (H + 2 * padding - kh) // stride + 1
    OW = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, O, OH, OW))
    for b in range(B):
        for o in range(O):
            for i in range(OH):
                for j in range(OW):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, o, i, j] = (patch * w[o]).sum()
    return out


def test_relu_definition():
    out = dc.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_softmax_symmetry():
    out = dc.softmax(Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5], atol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(5, 9)) * 10
    out = dc.softmax(Tensor(logits), axis=-1)
    assert np.abs(out.data.sum(axis=-1) - 1.0).max() < 1e-12


def test_softmax_shift_invariance():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(4, 7))
    a = dc.softmax(Tensor(logits), axis=-1).data
    b = dc.softmax(Tensor(logits + 123.456), axis=-1).data
    assert np.abs(a - b).max() < 1e-9


def test_conv2d_ones_kernel_counts_window():
    # 3x3 ones kernel over 5x5 ones input: every valid window sums to 9
    x = np.ones((1, 1, 5, 5))
    w = np.ones((1, 1, 3, 3))
    out = dc.conv2d(Tensor(x), Tensor(w), stride=1, padding=0)
    assert out.shape == (1, 1, 3, 3)
    assert np.allclose(out.data, 9.0)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_direct_summation(stride, padding):
    rng = np.random.default_rng(10 * stride + padding)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    out = dc.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
    assert np.allclose(out.data, conv2d_reference(x, w, stride, padding), atol=1e-12)


def test_conv_transpose2d_doubles_spatial_size():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 3, 4, 4))
    w = rng.normal(size=(3, 5, 4, 4))
    out = dc.conv_transpose2d(Tensor(x), Tensor(w), stride=2, padding=1)
    assert out.shape == (1, 5, 8, 8)


def test_conv_transpose2d_is_conv_adjoint():
    # <conv(x, w), y> == <x, conv_transpose(y, w)>: the conv kernel
    # [O, C, kh, kw] reads as [in=O, out=C] on the transposed side.
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(3, 2, 4, 4))
    y = rng.normal(size=(1, 3, 4, 4))
    cx = dc.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    cty = dc.conv_transpose2d(Tensor(y), Tensor(w), stride=2, padding=1).data
    assert abs((cx * y).sum() - (x * cty).sum()) < 1e-9


def test_conv1d_matches_direct_summation():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 3, 9))
    w = rng.normal(size=(4, 3, 3))
    out = dc.conv1d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    OL = (9 + 2 - 3) // 2 + 1
    ref = np.zeros((2, 4, OL))
    for b in range(2):
        for o in range(4):
            for i in range(OL):
                ref[b, o, i] = (xp[b, :, 2 * i:2 * i + 3] * w[o]).sum()
    assert np.allclose(out, ref, atol=1e-12)


def test_matmul_shape_error_names_op_and_extents():
    with pytest.raises(ShapeError, match="matmul.*2x3.*4x5"):
        dc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_conv2d_channel_mismatch_is_shape_error():
    with pytest.raises(ShapeError, match="conv2d"):
        dc.conv2d(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((2, 4, 3, 3))))


def test_div_clamps_tiny_denominator():
    out = dc.div(Tensor([1.0]), Tensor([0.0]))
    assert np.isfinite(out.data).all()
    assert out.data[0] == 1.0 / dc.DIV_EPS


def test_exp_clips_to_avoid_inf():
    out = dc.exp(Tensor([1e6]))
    assert np.isfinite(out.data).all()


def test_sqrt_guards_negative_and_zero():
    out = dc.sqrt(Tensor([0.0, -1e-9, 4.0]))
    assert np.isfinite(out.data).all()
    assert out.data[2] == 2.0


def test_forward_ops_finite_on_finite_inputs():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 4)) * 100
    for f in (dc.relu, dc.exp, dc.absolute, dc.sqrt,
              lambda t: dc.softmax(t, axis=-1), lambda t: dc.tsum(t, axis=0),
              lambda t: dc.tmean(t, axis=1), lambda t: dc.l2_norm(t, axis=1)):
        out = f(Tensor(x))
        assert np.isfinite(out.data).all()


def test_eval_forward_is_deterministic():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    a = dc.conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
    b = dc.conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
    assert np.array_equal(a, b)


def test_concat_and_take_roundtrip():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    b = Tensor(np.arange(6.0, 12.0).reshape(2, 3))
    cat = dc.concat([a, b], axis=0)
    assert np.array_equal(cat.data[:2], a.data)
    assert np.array_equal(cat[2:4].data, b.data)


def test_batch_norm_normalizes_in_train_mode():
    rng = np.random.default_rng(13)
    x = rng.normal(loc=5.0, scale=3.0, size=(16, 4, 5, 5))
    gamma, beta = np.ones(4), np.zeros(4)
    rm, rv = np.zeros(4), np.ones(4)
    out = dc.batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), rm, rv, training=True)
    assert np.abs(out.data.mean(axis=(0, 2, 3))).max() < 1e-12
    assert np.abs(out.data.std(axis=(0, 2, 3)) - 1.0).max() < 1e-3
    # running buffers moved toward the batch statistics
    assert np.abs(rm).min() > 0.1


def test_batch_norm_eval_uses_running_stats_and_is_pure():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(4, 3, 2, 2))
    rm, rv = np.array([1.0, 2.0, 3.0]), np.array([4.0, 4.0, 4.0])
    rm0, rv0 = rm.copy(), rv.copy()
    out = dc.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                        rm, rv, training=False)
    expected = (x - rm0.reshape(1, 3, 1, 1)) / np.sqrt(rv0.reshape(1, 3, 1, 1) + 1e-5)
    assert np.allclose(out.data, expected, atol=1e-12)
    assert np.array_equal(rm, rm0) and np.array_equal(rv, rv0)
