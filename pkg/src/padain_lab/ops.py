"""Differentiable primitives.

Backward rules are module-level functions so a test can swap one out and
confirm the gradient checker notices.
"""
from __future__ import annotations

from numbers import Number

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, InputError
from .tensor import Tensor, make_result


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _per_channel(shape, full) -> bool:
    # (N|1, C, 1, 1) against (N, C, H, W)
    return (
        len(shape) == 4
        and len(full) == 4
        and shape[2] == 1
        and shape[3] == 1
        and shape[1] == full[1]
        and shape[0] in (1, full[0])
    )


def _check_broadcast(op, a: np.ndarray, b: np.ndarray):
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    if _per_channel(sa, sb) or _per_channel(sb, sa):
        return
    raise DimensionError(f"{op}: shapes {sa} and {sb} differ beyond per-channel broadcasting")


def _binary(op, a, b, fwd, bwd_a, bwd_b):
    if isinstance(a, Number):
        bt = b
        data = fwd(a, bt.data)
        return make_result(op, data, (bt,), lambda g: (_unbroadcast(bwd_b(g, a, bt.data, data), bt.shape),))
    if isinstance(b, Number):
        at = a
        data = fwd(at.data, b)
        return make_result(op, data, (at,), lambda g: (_unbroadcast(bwd_a(g, at.data, b, data), at.shape),))
    _check_broadcast(op, a.data, b.data)
    data = fwd(a.data, b.data)

    def backward(g):
        return (
            _unbroadcast(bwd_a(g, a.data, b.data, data), a.shape),
            _unbroadcast(bwd_b(g, a.data, b.data, data), b.shape),
        )

    return make_result(op, data, (a, b), backward)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b) -> Tensor:
    return _binary(
        "div", a, b, np.divide,
        lambda g, x, y, o: g / y,
        lambda g, x, y, o: -g * o / y,
    )


def neg(x: Tensor) -> Tensor:
    return make_result("neg", -x.data, (x,), lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    return make_result("square", x.data * x.data, (x,), lambda g: (2 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_result("sqrt", out, (x,), lambda g: (g / (2 * out),))


def _relu_backward(g, x, out):
    return g * (x > 0)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return make_result("relu", out, (x,), lambda g: (_relu_backward(g, x.data, out),))


def sigmoid(x: Tensor) -> Tensor:
    out = 1 / (1 + np.exp(-x.data))
    return make_result("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_result("sum", np.sum(x.data, keepdims=False), (x,), lambda g: (np.broadcast_to(g, x.shape),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return make_result("mean", np.mean(x.data), (x,), lambda g: (np.broadcast_to(g / n, x.shape),))


def spatial_mean(x: Tensor) -> Tensor:
    """Mean over H and W, keeping dims: (N, C, H, W) -> (N, C, 1, 1)."""
    if x.ndim != 4:
        raise DimensionError(f"spatial_mean expects NCHW, got shape {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return make_result("spatial_mean", out, (x,), lambda g: (np.broadcast_to(g / hw, x.shape),))


def take(x: Tensor, index) -> Tensor:
    """Gather along the batch axis; out[i] = x[index[i]]."""
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return make_result("take", out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return make_result("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view (N, C, Ho, Wo, kh, kw) over an already padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _col2im(cols: np.ndarray, out_shape, stride: int) -> np.ndarray:
    """Scatter-add (N, C, Ho, Wo, kh, kw) patches into an (N, C, Hp, Wp) array."""
    _, _, ho, wo, kh, kw = cols.shape
    out = np.zeros(out_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j]
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _conv2d_backward(g, xp_win, w, xshape_p, stride, padding, with_bias):
    gx_cols = np.tensordot(g, w, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
    gx = _col2im(gx_cols.transpose(0, 3, 1, 2, 4, 5), xshape_p, stride)
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    gw = np.tensordot(g, xp_win, axes=([0, 2, 3], [0, 2, 3]))
    gb = g.sum(axis=(0, 2, 3)) if with_bias else None
    return gx, gw, gb


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects rank-4 input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w_ = x.shape
    oc, ic, kh, kw = weight.shape
    if c != ic:
        raise DimensionError(f"conv2d: input channels (axis 1 of input) = {c} but weight in-channels (axis 1) = {ic}")
    if bias is not None and bias.shape != (oc,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match out-channels {oc}")
    if stride < 1 or padding < 0:
        raise InputError(f"conv2d: need stride >= 1 and padding >= 0, got {stride}, {padding}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w_, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w_} (H, W axes)")
    xp = _pad(x.data, padding)
    win = _windows(xp, kh, kw, stride)
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, oc, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gx, gw, gb = _conv2d_backward(g, win, weight.data, xp.shape, stride, padding, bias is not None)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_result("conv2d", out, inputs, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution; ``weight`` is (InC, OutC, kH, kW)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv_transpose2d expects rank-4 tensors, got {x.shape} and {weight.shape}")
    n, c, h, w_ = x.shape
    ic, oc, kh, kw = weight.shape
    if c != ic:
        raise DimensionError(f"conv_transpose2d: input channels (axis 1) = {c} but weight axis 0 = {ic}")
    hp = (h - 1) * stride + kh + output_padding
    wp = (w_ - 1) * stride + kw + output_padding
    cols = np.tensordot(x.data, weight.data, axes=([1], [0]))  # (N, H, W, OC, kh, kw)
    full = _col2im(cols.transpose(0, 3, 1, 2, 4, 5), (n, oc, hp, wp), stride)
    out = full[:, :, padding:hp - padding, padding:wp - padding]
    if bias is not None:
        out = out + bias.data.reshape(1, oc, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gp = np.zeros((n, oc, hp, wp), dtype=g.dtype)
        gp[:, :, padding:hp - padding, padding:wp - padding] = g
        win = _windows(gp, kh, kw, stride)[:, :, :h, :w_]
        gx = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_result("conv_transpose2d", out, inputs, backward)


def max_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = stride or k
    if x.ndim != 4:
        raise DimensionError(f"max_pool2d expects NCHW, got {x.shape}")
    n, c, h, w_ = x.shape
    if h < k or w_ < k:
        raise DimensionError(f"max_pool2d: window {k} exceeds spatial size {h}x{w_}")
    win = _windows(x.data, k, k, stride)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * (arg == i * k + j)
        return (gx,)

    return make_result("max_pool2d", out, (x,), backward)


def avg_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = stride or k
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d expects NCHW, got {x.shape}")
    if x.shape[2] < k or x.shape[3] < k:
        raise DimensionError(f"avg_pool2d: window {k} exceeds spatial size {x.shape[2]}x{x.shape[3]}")
    win = _windows(x.data, k, k, stride)
    out = win.mean(axis=(4, 5))
    ho, wo = out.shape[2], out.shape[3]
    scale = 1.0 / (k * k)

    def backward(g):
        gx = np.zeros_like(x.data)
        gs = g * scale
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gs
        return (gx,)

    return make_result("avg_pool2d", out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return reshape(spatial_mean(x), (x.shape[0], x.shape[1]))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x W^T + b with ``weight`` shaped (out_features, in_features)."""
    if x.ndim != 2:
        raise DimensionError(f"linear expects a flattened (N, D) input, got {x.shape}")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise DimensionError(f"linear: input features (axis 1) = {x.shape[1]} but weight is {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias shape {bias.shape} vs out-features {weight.shape[0]}")
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_result("linear", out, inputs, backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects (N, K) logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g / n),)

    return make_result("softmax_cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    n = diff.size
    loss = np.asarray((diff * diff).mean(), dtype=pred.dtype)
    return make_result("mse_loss", loss, (pred,), lambda g: (diff * (2 * g / n),))
