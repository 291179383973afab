# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im / 2x2 max-pool kernels.

Same contracts and column layout as ``_pykernels``. Padding is handled inline,
so no padded copy of the input is materialised.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline void _valid_range(Py_ssize_t off, Py_ssize_t n_out, Py_ssize_t stride,
                              Py_ssize_t extent, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output positions o with 0 <= o*stride + off < extent
    cdef Py_ssize_t a = 0, b = n_out
    if off < 0:
        a = (-off + stride - 1) // stride
    if (n_out - 1) * stride + off >= extent:
        b = (extent - off + stride - 1) // stride
        if b < 0:
            b = 0
    if a > b:
        a = b
    lo[0] = a
    hi[0] = b


cdef void _im2col(const real[:, :, :, ::1] x, real[:, :, ::1] cols,
                  int kh, int kw, int stride, int pad, int ho, int wo) noexcept nogil:
    cdef Py_ssize_t n, c, ky, kx, oy, ox, row, iy, y0, y1, x0, x1
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef real* dst
    cdef const real* src
    for n in range(N):
        for c in range(C):
            for ky in range(kh):
                _valid_range(ky - pad, ho, stride, H, &y0, &y1)
                for kx in range(kw):
                    _valid_range(kx - pad, wo, stride, W, &x0, &x1)
                    row = (c * kh + ky) * kw + kx
                    dst = &cols[n, row, 0]
                    for oy in range(ho):
                        if oy < y0 or oy >= y1:
                            for ox in range(wo):
                                dst[oy * wo + ox] = 0
                            continue
                        iy = oy * stride + ky - pad
                        src = &x[n, c, iy, 0]
                        for ox in range(x0):
                            dst[oy * wo + ox] = 0
                        if stride == 1:
                            for ox in range(x0, x1):
                                dst[oy * wo + ox] = src[ox + kx - pad]
                        else:
                            for ox in range(x0, x1):
                                dst[oy * wo + ox] = src[ox * stride + kx - pad]
                        for ox in range(x1, wo):
                            dst[oy * wo + ox] = 0


cdef void _col2im(const real[:, :, ::1] cols, real[:, :, :, ::1] out,
                  int kh, int kw, int stride, int pad, int ho, int wo) noexcept nogil:
    cdef Py_ssize_t n, c, ky, kx, oy, ox, row, iy, y0, y1, x0, x1
    cdef Py_ssize_t N = out.shape[0], C = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef const real* src
    cdef real* dst
    for n in range(N):
        for c in range(C):
            for ky in range(kh):
                _valid_range(ky - pad, ho, stride, H, &y0, &y1)
                for kx in range(kw):
                    _valid_range(kx - pad, wo, stride, W, &x0, &x1)
                    row = (c * kh + ky) * kw + kx
                    src = &cols[n, row, 0]
                    for oy in range(y0, y1):
                        iy = oy * stride + ky - pad
                        dst = &out[n, c, iy, 0]
                        if stride == 1:
                            for ox in range(x0, x1):
                                dst[ox + kx - pad] += src[oy * wo + ox]
                        else:
                            for ox in range(x0, x1):
                                dst[ox * stride + kx - pad] += src[oy * wo + ox]


cdef void _pool_fwd(const real[:, :, :, ::1] x, real[:, :, :, ::1] out,
                    cnp.uint8_t[:, :, :, ::1] idx) noexcept nogil:
    cdef Py_ssize_t n, c, oy, ox
    cdef real best, v
    cdef cnp.uint8_t k
    for n in range(x.shape[0]):
        for c in range(x.shape[1]):
            for oy in range(out.shape[2]):
                for ox in range(out.shape[3]):
                    best = x[n, c, 2 * oy, 2 * ox]
                    k = 0
                    v = x[n, c, 2 * oy, 2 * ox + 1]
                    if v > best:
                        best = v
                        k = 1
                    v = x[n, c, 2 * oy + 1, 2 * ox]
                    if v > best:
                        best = v
                        k = 2
                    v = x[n, c, 2 * oy + 1, 2 * ox + 1]
                    if v > best:
                        best = v
                        k = 3
                    out[n, c, oy, ox] = best
                    idx[n, c, oy, ox] = k


cdef void _pool_bwd(const real[:, :, :, ::1] g, const cnp.uint8_t[:, :, :, ::1] idx,
                    real[:, :, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t n, c, oy, ox
    cdef cnp.uint8_t k
    for n in range(g.shape[0]):
        for c in range(g.shape[1]):
            for oy in range(g.shape[2]):
                for ox in range(g.shape[3]):
                    k = idx[n, c, oy, ox]
                    out[n, c, 2 * oy + (k >> 1), 2 * ox + (k & 1)] = g[n, c, oy, ox]


def im2col(x, int kh, int kw, int stride, int pad):
    x = np.ascontiguousarray(x)
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((n, c * kh * kw, ho * wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, cols, kh, kw, stride, pad, ho, wo)
    elif x.dtype == np.float64:
        _im2col[double](x, cols, kh, kw, stride, pad, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


def col2im(cols, shape, int kh, int kw, int stride, int pad):
    cols = np.ascontiguousarray(cols)
    n, c, h, w = shape
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, c * kh * kw, ho * wo)
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out, kh, kw, stride, pad, ho, wo)
    elif cols.dtype == np.float64:
        _col2im[double](cols, out, kh, kw, stride, pad, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out


def maxpool2x2_forward(x):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    out = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty((n, c, h // 2, w // 2), dtype=np.uint8)
    if x.dtype == np.float32:
        _pool_fwd[float](x, out, idx)
    elif x.dtype == np.float64:
        _pool_fwd[double](x, out, idx)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return out, idx


def maxpool2x2_backward(g, idx):
    g = np.ascontiguousarray(g)
    idx = np.ascontiguousarray(idx, dtype=np.uint8)
    n, c, ho, wo = g.shape
    out = np.zeros((n, c, 2 * ho, 2 * wo), dtype=g.dtype)
    if g.dtype == np.float32:
        _pool_bwd[float](g, idx, out)
    elif g.dtype == np.float64:
        _pool_bwd[double](g, idx, out)
    else:
        raise TypeError(f"unsupported dtype {g.dtype}")
    return out
