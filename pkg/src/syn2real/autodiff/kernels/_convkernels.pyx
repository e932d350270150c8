# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Direct-loop conv/pool kernels, compiled.

Same contract as numpy_kernels: float64 accumulators regardless of storage
dtype, deterministic summation order, first-index max-pool tie-break. Gather
formulations everywhere, so no scatter races and no atomics; the module is
deliberately single-threaded to keep results bit-reproducible.
"""

import numpy as np

cimport cython


ctypedef fused floating:
    float
    double


def conv2d_out_hw(int h, int w, int kh, int kw, int stride, int padding):
    return ((h + 2 * padding - kh) // stride + 1,
            (w + 2 * padding - kw) // stride + 1)


def conv_transpose2d_out_hw(int h, int w, int kh, int kw, int stride, int padding):
    return ((h - 1) * stride - 2 * padding + kh,
            (w - 1) * stride - 2 * padding + kw)


cdef void _conv2d_fwd(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                      floating[:, :, :, ::1] y, int stride, int padding) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t b, co, ci, oy, ox, i, j, ih, iw
    cdef double acc
    for b in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for i in range(kh):
                            ih = oy * stride - padding + i
                            if ih < 0 or ih >= h:
                                continue
                            for j in range(kw):
                                iw = ox * stride - padding + j
                                if iw < 0 or iw >= wid:
                                    continue
                                acc += (<double> x[b, ci, ih, iw]) * (<double> w[co, ci, i, j])
                    y[b, co, oy, ox] = <floating> acc


cdef void _conv2d_gx(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] w,
                     floating[:, :, :, ::1] gx, int stride, int padding) noexcept nogil:
    cdef Py_ssize_t n = gy.shape[0], cout = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t h = gx.shape[2], wid = gx.shape[3]
    cdef Py_ssize_t b, ci, co, ih, iw, i, j, oy, ox, ty, tx
    cdef double acc
    for b in range(n):
        for ci in range(cin):
            for ih in range(h):
                for iw in range(wid):
                    acc = 0.0
                    for co in range(cout):
                        for i in range(kh):
                            ty = ih + padding - i
                            if ty < 0 or ty % stride != 0:
                                continue
                            oy = ty // stride
                            if oy >= oh:
                                continue
                            for j in range(kw):
                                tx = iw + padding - j
                                if tx < 0 or tx % stride != 0:
                                    continue
                                ox = tx // stride
                                if ox >= ow:
                                    continue
                                acc += (<double> gy[b, co, oy, ox]) * (<double> w[co, ci, i, j])
                    gx[b, ci, ih, iw] = <floating> acc


cdef void _conv2d_gw(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] x,
                     floating[:, :, :, ::1] gw, int stride, int padding) noexcept nogil:
    cdef Py_ssize_t n = gy.shape[0], cout = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t cin = x.shape[1], h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t b, co, ci, i, j, oy, ox, ih, iw
    cdef double acc
    for co in range(cout):
        for ci in range(cin):
            for i in range(kh):
                for j in range(kw):
                    acc = 0.0
                    for b in range(n):
                        for oy in range(oh):
                            ih = oy * stride - padding + i
                            if ih < 0 or ih >= h:
                                continue
                            for ox in range(ow):
                                iw = ox * stride - padding + j
                                if iw < 0 or iw >= wid:
                                    continue
                                acc += (<double> gy[b, co, oy, ox]) * (<double> x[b, ci, ih, iw])
                    gw[co, ci, i, j] = <floating> acc


cdef void _ct_fwd(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                  floating[:, :, :, ::1] y, int stride, int padding) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t cout = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t b, co, ci, oy, ox, i, j, ih, iw, ty, tx
    cdef double acc
    for b in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for i in range(kh):
                            ty = oy + padding - i
                            if ty < 0 or ty % stride != 0:
                                continue
                            ih = ty // stride
                            if ih >= h:
                                continue
                            for j in range(kw):
                                tx = ox + padding - j
                                if tx < 0 or tx % stride != 0:
                                    continue
                                iw = tx // stride
                                if iw >= wid:
                                    continue
                                acc += (<double> x[b, ci, ih, iw]) * (<double> w[ci, co, i, j])
                    y[b, co, oy, ox] = <floating> acc


cdef void _ct_gx(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] w,
                 floating[:, :, :, ::1] gx, int stride, int padding) noexcept nogil:
    cdef Py_ssize_t n = gy.shape[0], cout = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t cin = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t h = gx.shape[2], wid = gx.shape[3]
    cdef Py_ssize_t b, ci, co, ih, iw, i, j, oy, ox
    cdef double acc
    for b in range(n):
        for ci in range(cin):
            for ih in range(h):
                for iw in range(wid):
                    acc = 0.0
                    for co in range(cout):
                        for i in range(kh):
                            oy = ih * stride - padding + i
                            if oy < 0 or oy >= oh:
                                continue
                            for j in range(kw):
                                ox = iw * stride - padding + j
                                if ox < 0 or ox >= ow:
                                    continue
                                acc += (<double> gy[b, co, oy, ox]) * (<double> w[ci, co, i, j])
                    gx[b, ci, ih, iw] = <floating> acc


cdef void _ct_gw(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] x,
                 floating[:, :, :, ::1] gw, int stride, int padding) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t cout = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t b, ci, co, i, j, ih, iw, oy, ox
    cdef double acc
    for ci in range(cin):
        for co in range(cout):
            for i in range(kh):
                for j in range(kw):
                    acc = 0.0
                    for b in range(n):
                        for ih in range(h):
                            oy = ih * stride - padding + i
                            if oy < 0 or oy >= oh:
                                continue
                            for iw in range(wid):
                                ox = iw * stride - padding + j
                                if ox < 0 or ox >= ow:
                                    continue
                                acc += (<double> x[b, ci, ih, iw]) * (<double> gy[b, co, oy, ox])
                    gw[ci, co, i, j] = <floating> acc


cdef void _pool_fwd(floating[:, :, :, ::1] x, floating[:, :, :, ::1] y,
                    int[:, :, :, ::1] idx, int window, int stride) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t b, ch, oy, ox, i, j
    cdef double best, v
    cdef int best_k, k
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    best = -1e308
                    best_k = 0
                    k = 0
                    for i in range(window):
                        for j in range(window):
                            v = <double> x[b, ch, oy * stride + i, ox * stride + j]
                            if v > best:
                                best = v
                                best_k = k
                            k += 1
                    y[b, ch, oy, ox] = x[b, ch, oy * stride + best_k // window,
                                         ox * stride + best_k % window]
                    idx[b, ch, oy, ox] = best_k


cdef void _pool_bwd(floating[:, :, :, ::1] gy, int[:, :, :, ::1] idx,
                    floating[:, :, :, ::1] gx, int window, int stride) noexcept nogil:
    cdef Py_ssize_t n = gy.shape[0], c = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t b, ch, oy, ox
    cdef int k
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    k = idx[b, ch, oy, ox]
                    gx[b, ch, oy * stride + k // window, ox * stride + k % window] += gy[b, ch, oy, ox]


def _pair(a, b, name):
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    if a.dtype != b.dtype:
        raise TypeError(f"{name}: mixed dtypes {a.dtype} and {b.dtype}")
    if a.dtype not in (np.float32, np.float64):
        raise TypeError(f"{name}: unsupported dtype {a.dtype}")
    return a, b


def conv2d_forward(x, w, int stride, int padding):
    x, w = _pair(x, w, "conv2d_forward")
    oh, ow = conv2d_out_hw(x.shape[2], x.shape[3], w.shape[2], w.shape[3], stride, padding)
    y = np.empty((x.shape[0], w.shape[0], oh, ow), dtype=x.dtype)
    if x.dtype == np.float32:
        _conv2d_fwd[float](x, w, y, stride, padding)
    else:
        _conv2d_fwd[double](x, w, y, stride, padding)
    return y


def conv2d_grad_input(gy, w, int stride, int padding, in_hw):
    gy, w = _pair(gy, w, "conv2d_grad_input")
    gx = np.empty((gy.shape[0], w.shape[1], in_hw[0], in_hw[1]), dtype=gy.dtype)
    if gy.dtype == np.float32:
        _conv2d_gx[float](gy, w, gx, stride, padding)
    else:
        _conv2d_gx[double](gy, w, gx, stride, padding)
    return gx


def conv2d_grad_kernel(gy, x, int stride, int padding, k_hw):
    gy, x = _pair(gy, x, "conv2d_grad_kernel")
    gw = np.empty((gy.shape[1], x.shape[1], k_hw[0], k_hw[1]), dtype=gy.dtype)
    if gy.dtype == np.float32:
        _conv2d_gw[float](gy, x, gw, stride, padding)
    else:
        _conv2d_gw[double](gy, x, gw, stride, padding)
    return gw


def conv_transpose2d_forward(x, w, int stride, int padding):
    x, w = _pair(x, w, "conv_transpose2d_forward")
    oh, ow = conv_transpose2d_out_hw(x.shape[2], x.shape[3], w.shape[2], w.shape[3],
                                     stride, padding)
    y = np.empty((x.shape[0], w.shape[1], oh, ow), dtype=x.dtype)
    if x.dtype == np.float32:
        _ct_fwd[float](x, w, y, stride, padding)
    else:
        _ct_fwd[double](x, w, y, stride, padding)
    return y


def conv_transpose2d_grad_input(gy, w, int stride, int padding):
    gy, w = _pair(gy, w, "conv_transpose2d_grad_input")
    h = (gy.shape[2] + 2 * padding - w.shape[2]) // stride + 1
    wid = (gy.shape[3] + 2 * padding - w.shape[3]) // stride + 1
    gx = np.empty((gy.shape[0], w.shape[0], h, wid), dtype=gy.dtype)
    if gy.dtype == np.float32:
        _ct_gx[float](gy, w, gx, stride, padding)
    else:
        _ct_gx[double](gy, w, gx, stride, padding)
    return gx


def conv_transpose2d_grad_kernel(gy, x, int stride, int padding):
    gy, x = _pair(gy, x, "conv_transpose2d_grad_kernel")
    kh = gy.shape[2] + 2 * padding - (x.shape[2] - 1) * stride
    kw = gy.shape[3] + 2 * padding - (x.shape[3] - 1) * stride
    gw = np.empty((x.shape[1], gy.shape[1], kh, kw), dtype=gy.dtype)
    if gy.dtype == np.float32:
        _ct_gw[float](gy, x, gw, stride, padding)
    else:
        _ct_gw[double](gy, x, gw, stride, padding)
    return gw


def maxpool2d_forward(x, int window, int stride):
    x = np.ascontiguousarray(x)
    if x.dtype not in (np.float32, np.float64):
        raise TypeError(f"maxpool2d_forward: unsupported dtype {x.dtype}")
    oh = (x.shape[2] - window) // stride + 1
    ow = (x.shape[3] - window) // stride + 1
    y = np.empty((x.shape[0], x.shape[1], oh, ow), dtype=x.dtype)
    idx = np.empty((x.shape[0], x.shape[1], oh, ow), dtype=np.int32)
    if x.dtype == np.float32:
        _pool_fwd[float](x, y, idx, window, stride)
    else:
        _pool_fwd[double](x, y, idx, window, stride)
    return y, idx


def maxpool2d_backward(gy, idx, in_hw, int window, int stride):
    gy = np.ascontiguousarray(gy)
    idx = np.ascontiguousarray(idx, dtype=np.int32)
    gx = np.zeros((gy.shape[0], gy.shape[1], in_hw[0], in_hw[1]), dtype=gy.dtype)
    if gy.dtype == np.float32:
        _pool_bwd[float](gy, idx, gx, window, stride)
    elif gy.dtype == np.float64:
        _pool_bwd[double](gy, idx, gx, window, stride)
    else:
        raise TypeError(f"maxpool2d_backward: unsupported dtype {gy.dtype}")
    return gx
