import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from padain_lab import ops
from padain_lab.errors import DimensionError, InputError, UsageError
from padain_lab.gradcheck import gradient_check
from padain_lab.tensor import Tensor, backward, detach, fresh_tape


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(n):
        for oc in range(o):
            for y in range(oh):
                for xx in range(ow):
                    acc = b[oc]
                    for ic in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += xp[i, ic, y * stride + dy, xx * stride + dx] * w[oc, ic, dy, dx]
                    out[i, oc, y, xx] = acc
    return out


def naive_conv_t(x, w, stride, pad):
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    full = np.zeros((n, cout, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for i in range(n):
        for ic in range(cin):
            for y in range(h):
                for xx in range(wd):
                    full[i, :, y * stride:y * stride + kh, xx * stride:xx * stride + kw] += x[i, ic, y, xx] * w[ic]
    return full[:, :, pad:full.shape[2] - pad, pad:full.shape[3] - pad]


def test_conv_sum_of_ones():
    out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 1, 1) and out.data.item() == 9.0


def test_conv_scalar_affine():
    x = Tensor(np.array([[[[1, 2], [3, 4]]]], dtype=np.float32))
    out = ops.conv2d(x, Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.ones(1)))
    np.testing.assert_array_equal(out.data[0, 0], [[3, 5], [7, 9]])


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_matches_loop_oracle(rng, stride, pad):
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad)
    np.testing.assert_allclose(out.data, naive_conv(x.astype(np.float64), w, b, stride, pad), atol=1e-5)


def test_conv_transpose_matches_scatter_oracle(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((3, 2, 4, 4))
    out = ops.conv_transpose2d(Tensor(x), Tensor(w), None, stride=2, padding=1)
    assert out.shape == (2, 2, 8, 8)
    np.testing.assert_allclose(out.data, naive_conv_t(x, w, 2, 1), atol=1e-10)


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(DimensionError, match="channel"):
        ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_relu_and_maxpool_definitions():
    np.testing.assert_array_equal(ops.relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0, 0, 2])
    mp = ops.max_pool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), 2)
    np.testing.assert_array_equal(mp.data, [[[[4.0]]]])


def test_linear_matches_loops(rng):
    x, w, b = rng.standard_normal((3, 7)), rng.standard_normal((5, 7)), rng.standard_normal(5)
    ref = np.array([[sum(x[i, k] * w[j, k] for k in range(7)) + b[j] for j in range(5)] for i in range(3)])
    np.testing.assert_allclose(ops.linear(Tensor(x.astype(np.float32)), Tensor(w.astype(np.float32)),
                                          Tensor(b.astype(np.float32))).data, ref, atol=1e-5)


def test_cross_entropy_cases(rng):
    ce = ops.softmax_cross_entropy(Tensor(np.zeros((1, 2))), [0])
    assert math.isclose(float(ce.data), math.log(2), rel_tol=1e-6)
    big = ops.softmax_cross_entropy(Tensor(np.array([[1000.0, 0.0]], dtype=np.float32)), [0])
    assert np.isfinite(big.data) and float(big.data) < 1e-6
    logits = rng.standard_normal((4, 10))
    y = np.array([0, 3, 9, 5])
    ref = np.mean([math.log(sum(math.exp(v) for v in row)) - row[t] for row, t in zip(logits, y)])
    assert abs(float(ops.softmax_cross_entropy(Tensor(logits.astype(np.float32)), y).data) - ref) < 1e-6
    with pytest.raises(InputError):
        ops.softmax_cross_entropy(Tensor(logits), [0, 1, 2, 10])


def test_backward_basics():
    with fresh_tape():
        x = Tensor(np.zeros((2, 3)), requires_grad=True)
        backward(ops.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    with fresh_tape():
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        backward(ops.sum(ops.square(x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_needs_scalar():
    with fresh_tape():
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            backward(ops.relu(x))


def test_detach_cases(rng):
    v = rng.standard_normal(5)
    with fresh_tape():
        x = Tensor(v.copy(), requires_grad=True)
        backward(ops.sum(ops.mul(detach(x), x)))
        np.testing.assert_array_equal(x.grad, v)
    with fresh_tape():
        x = Tensor(v.copy(), requires_grad=True)
        backward(ops.sum(ops.add(detach(x), 0.0)))
        assert x.grad is None or not np.any(x.grad)


def test_gradcheck_square_is_tight(rng):
    # central differences are exact on a quadratic, so a wide step only removes roundoff
    assert gradient_check(lambda t: ops.sum(ops.square(t)), rng.standard_normal((3, 4)), eps=1e-3) < 1e-9


def test_gradcheck_conv_relu_linear_chain(rng):
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    lw = Tensor(rng.standard_normal((4, 27)))
    f = lambda t: ops.linear(ops.flatten(ops.relu(ops.conv2d(t, w))), lw)  # noqa: E731
    assert gradient_check(f, rng.standard_normal((2, 2, 5, 5)), eps=1e-5) < 1e-6


small = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(2, 4), st.integers(2, 4)),
               elements=st.floats(-3, 3))


@given(small)
def test_sigmoid_grad_property(x):
    assert gradient_check(ops.sigmoid, x, eps=1e-5) < 1e-6


@given(small)
def test_pool_and_mean_grad_property(x):
    assert gradient_check(ops.spatial_mean, x, eps=1e-5) < 1e-6
    assert gradient_check(lambda t: ops.avg_pool2d(t, 2, 1), x, eps=1e-5) < 1e-6


@given(small, st.integers(0, 2**31 - 1))
def test_add_mul_grads_property(x, seed):
    other = Tensor(np.random.default_rng(seed).standard_normal(x.shape))
    assert gradient_check(lambda t: ops.mul(ops.add(t, other), other), x, eps=1e-5) < 1e-6


def test_ops_are_deterministic(rng):
    x = Tensor(rng.standard_normal((2, 3, 6, 6)).astype(np.float32))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
    a = ops.conv2d(x, w, None, 1, 1).data
    assert np.array_equal(a, ops.conv2d(x, w, None, 1, 1).data)
