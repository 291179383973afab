"""Differentiable operations used by the counting network.

Every op takes and returns :class:`Tensor`; plain arrays and scalars are
treated as constants.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _binary_operands(a, b):
    if isinstance(a, Tensor):
        return a, _const(b, a)
    b = as_tensor(b)
    return _const(a, b), b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), bw, "mul")


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis)), (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def bw(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return make_result(np.asarray(x.data.sum() / n), (x,), bw, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        return (g.reshape(x.shape),)

    return make_result(x.data.reshape(shape), (x,), bw, "reshape")


def detach(x: Tensor) -> Tensor:
    """Value-equal copy that is invisible to the tape."""
    return Tensor(np.array(as_tensor(x).data, copy=True))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation over an NCHW batch with an OIKhKw filter bank."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"input has {c} channels but weight expects {ci}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    span_h, span_w = h + 2 * padding - kh, w + 2 * padding - kw
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ValueError(
            f"non-integral output extent for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}")
    ho, wo = span_h // stride + 1, span_w // stride + 1
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} does not match {o} output channels")
        inputs.append(bias)

    cols = kernels.im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, o, ho, wo)

    def bw(g):
        g2 = g.reshape(n, o, ho * wo)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(np.matmul(wmat.T, g2), x.shape, kh, kw, stride, padding)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=(0, 2)))
        return grads

    return make_result(out, inputs, bw, "conv2d")


def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling; ties route to the first cell in row-major order."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"maxpool2x2 expects NCHW input, got shape {x.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"maxpool2x2 needs even spatial extents, got {x.shape[2:]}")
    out, idx = kernels.maxpool2x2_forward(x.data)

    def bw(g):
        return (kernels.maxpool2x2_backward(np.ascontiguousarray(g), idx),)

    return make_result(out, (x,), bw, "maxpool2x2")


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Per-channel leaky rectifier ``x if x > 0 else a*x``; channels on axis 1."""
    x, slope = as_tensor(x), as_tensor(slope)
    if x.ndim < 2 or slope.shape != (x.shape[1],):
        raise ValueError(f"slope shape {slope.shape} does not match channel count of {x.shape}")
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    a = slope.data.reshape(bshape)
    pos = x.data > 0
    out = np.where(pos, x.data, a * x.data)

    def bw(g):
        gx = np.where(pos, g, a * g)
        axes = (0,) + tuple(range(2, x.ndim))
        ga = np.where(pos, 0, g * x.data).sum(axis=axes)
        return gx, ga

    return make_result(out, (x, slope), bw, "prelu")


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: NCHW -> NC."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects NCHW input, got shape {x.shape}")
    hw = x.shape[2] * x.shape[3]
    if hw == 0:
        raise ValueError("global_avg_pool over an empty spatial extent")
    out = x.data.sum(axis=(2, 3)) / hw

    def bw(g):
        return (np.broadcast_to((g / hw)[:, :, None, None], x.shape).copy(),)

    return make_result(out, (x,), bw, "global_avg_pool")


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (N, C) and weight (1, C)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ValueError(f"affine width mismatch: input {x.shape}, weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T + bias.data

    def bw(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return make_result(out, (x, weight, bias), bw, "affine")


def channel_weighted_sum(features: Tensor, weight: Tensor) -> Tensor:
    """``out[n, y, x] = sum_c weight[c] * features[n, c, y, x]``."""
    features, weight = as_tensor(features), as_tensor(weight)
    if features.ndim != 4:
        raise ValueError(f"expected NCHW features, got shape {features.shape}")
    wv = weight.data.reshape(-1)
    if wv.shape[0] != features.shape[1]:
        raise ValueError(f"weight width {wv.shape[0]} != channel count {features.shape[1]}")
    out = np.tensordot(features.data, wv, axes=([1], [0]))

    def bw(g):
        gf = g[:, None, :, :] * wv[None, :, None, None]
        gw = np.tensordot(g, features.data, axes=([0, 1, 2], [0, 2, 3]))
        return gf, gw.reshape(weight.shape)

    return make_result(out, (features, weight), bw, "channel_weighted_sum")


def minmax_normalize(x: Tensor, eps: float, axes=None, lo=None, hi=None) -> Tensor:
    """``(x - min) / (max - min + eps)`` with min and max held as gradient constants.

    ``axes`` selects the reduction (None = whole tensor); ``lo``/``hi`` override
    the statistics, which makes the op exactly the affine map its backward uses.
    """
    x = as_tensor(x)
    lo = x.data.min(axis=axes, keepdims=True) if lo is None else np.asarray(lo, dtype=x.dtype)
    hi = x.data.max(axis=axes, keepdims=True) if hi is None else np.asarray(hi, dtype=x.dtype)
    scale = 1.0 / (hi - lo + eps)
    out = (x.data - lo) * scale

    def bw(g):
        return (g * scale,)

    return make_result(out, (x,), bw, "minmax_normalize")


def _check_same_shape(pred: Tensor, target: Tensor, name: str) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"{name}: shape mismatch {pred.shape} vs {target.shape}")


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error. The subgradient at zero difference is 0."""
    pred = as_tensor(pred)
    target = _const(target, pred)
    _check_same_shape(pred, target, "l1_loss")
    d = pred.data - target.data
    n = d.size

    def bw(g):
        s = np.sign(d) * (g / n)
        return s, -s

    return make_result(np.asarray(np.abs(d).sum() / n), (pred, target), bw, "l1_loss")


def smooth_l1_loss(pred: Tensor, target) -> Tensor:
    """Mean of ``0.5 d^2`` for ``|d| < 1`` and ``|d| - 0.5`` otherwise."""
    pred = as_tensor(pred)
    target = _const(target, pred)
    _check_same_shape(pred, target, "smooth_l1_loss")
    d = pred.data - target.data
    ad = np.abs(d)
    quad = ad < 1.0
    n = d.size
    val = np.where(quad, 0.5 * d * d, ad - 0.5).sum() / n

    def bw(g):
        s = np.where(quad, d, np.sign(d)) * (g / n)
        return s, -s

    return make_result(np.asarray(val), (pred, target), bw, "smooth_l1_loss")
