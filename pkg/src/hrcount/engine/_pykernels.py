"""Pure numpy implementations of the hot kernels.

Column layout shared with the compiled backend: ``cols[n, (c, ky, kx), (oy, ox)]``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, c, ho, wo, kh, kw) -> (n, c, kh, kw, ho, wo)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, shape, kh, kw, stride, pad):
    n, c, h, w = shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ky in range(kh):
        ys = slice(ky, ky + stride * (ho - 1) + 1, stride)
        for kx in range(kw):
            xs = slice(kx, kx + stride * (wo - 1) + 1, stride)
            out[:, :, ys, xs] += cols[:, :, ky, kx]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    # np.argmax returns the first maximum: row-major tie-break
    idx = np.argmax(win, axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(g, idx):
    n, c, ho, wo = g.shape
    onehot = idx[..., None] == np.arange(4, dtype=np.uint8)
    win = np.where(onehot, g[..., None], 0).astype(g.dtype)
    win = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(win.reshape(n, c, 2 * ho, 2 * wo))
