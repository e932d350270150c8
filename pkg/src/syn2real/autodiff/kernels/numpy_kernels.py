"""Vectorized conv/pool kernels built on numpy + BLAS.

All kernels keep the storage dtype of their inputs (float32 or float64) but
accumulate every inner product in float64, matching the tensor core's
precision contract. Reduction order is fixed by the im2col/GEMM formulation,
so repeated calls on identical inputs are bit-identical.

Layouts:
    conv2d kernel            [Cout, Cin, kh, kw]   (cross-correlation)
    conv_transpose2d kernel  [Cin, Cout, kh, kw]
"""

from __future__ import annotations

import numpy as np


def conv2d_out_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    return (
        (h + 2 * padding - kh) // stride + 1,
        (w + 2 * padding - kw) // stride + 1,
    )


def conv_transpose2d_out_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    return (
        (h - 1) * stride - 2 * padding + kh,
        (w - 1) * stride - 2 * padding + kw,
    )


def _im2col64(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Return window matrix [N*OH*OW, C*kh*kw] as float64."""
    n, c, h, w = x.shape
    oh, ow = conv2d_out_hw(h, w, kh, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, oh, ow, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    return view.reshape(n * oh * ow, c * kh * kw).astype(np.float64)


def _col2im64(cols: np.ndarray, n: int, c: int, h: int, w: int,
              kh: int, kw: int, stride: int, padding: int,
              gh: int, gw_: int) -> np.ndarray:
    """Scatter-add cols [N*gh*gw, C*kh*kw] back onto an [N,C,H,W] float64 grid.

    (gh, gw_) is the sliding-window grid the columns were sampled on; window
    (i, j) of grid cell (y, x) lands at (y*stride - padding + i, ...).
    """
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cols6 = cols.reshape(n, gh, gw_, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    hi = (gh - 1) * stride + 1
    wi = (gw_ - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + hi:stride, j:j + wi:stride] += cols6[:, :, i, j]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return out


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    oh, ow = conv2d_out_hw(h, wid, kh, kw, stride, padding)
    cols = _im2col64(x, kh, kw, stride, padding)
    w2 = w.reshape(cout, -1).astype(np.float64)
    y = cols @ w2.T
    y = y.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y, dtype=x.dtype)


def conv2d_grad_input(gy: np.ndarray, w: np.ndarray, stride: int, padding: int,
                      in_hw: tuple[int, int]) -> np.ndarray:
    n, cout, oh, ow = gy.shape
    _, cin, kh, kw = w.shape
    h, wid = in_hw
    gy2 = gy.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout).astype(np.float64)
    w2 = w.reshape(cout, -1).astype(np.float64)
    cols = gy2 @ w2
    gx = _col2im64(cols, n, cin, h, wid, kh, kw, stride, padding, oh, ow)
    return gx.astype(gy.dtype)


def conv2d_grad_kernel(gy: np.ndarray, x: np.ndarray, stride: int, padding: int,
                       k_hw: tuple[int, int]) -> np.ndarray:
    n, cout, oh, ow = gy.shape
    _, cin, _, _ = x.shape
    kh, kw = k_hw
    cols = _im2col64(x, kh, kw, stride, padding)
    gy2 = gy.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout).astype(np.float64)
    gw = gy2.T @ cols
    return gw.reshape(cout, cin, kh, kw).astype(gy.dtype)


def conv_transpose2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, cin, h, wid = x.shape
    _, cout, kh, kw = w.shape
    oh, ow = conv_transpose2d_out_hw(h, wid, kh, kw, stride, padding)
    x2 = x.transpose(0, 2, 3, 1).reshape(n * h * wid, cin).astype(np.float64)
    w2 = w.reshape(cin, -1).astype(np.float64)
    cols = x2 @ w2
    y = _col2im64(cols, n, cout, oh, ow, kh, kw, stride, padding, h, wid)
    return y.astype(x.dtype)


def conv_transpose2d_grad_input(gy: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n = gy.shape[0]
    cin, cout, kh, kw = w.shape
    cols = _im2col64(gy, kh, kw, stride, padding)
    h = (gy.shape[2] + 2 * padding - kh) // stride + 1
    wid = (gy.shape[3] + 2 * padding - kw) // stride + 1
    w2 = w.reshape(cin, -1).astype(np.float64)
    gx = cols @ w2.T
    gx = gx.reshape(n, h, wid, cin).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gx, dtype=gy.dtype)


def conv_transpose2d_grad_kernel(gy: np.ndarray, x: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, cin, h, wid = x.shape
    cout = gy.shape[1]
    kh = gy.shape[2] + 2 * padding - (h - 1) * stride
    kw = gy.shape[3] + 2 * padding - (wid - 1) * stride
    cols = _im2col64(gy, kh, kw, stride, padding)
    x2 = x.transpose(0, 2, 3, 1).reshape(n * h * wid, cin).astype(np.float64)
    gw = x2.T @ cols
    return gw.reshape(cin, cout, kh, kw).astype(gy.dtype)


def maxpool2d_forward(x: np.ndarray, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns (pooled, argmax) where argmax is the flat in-window offset.

    numpy argmax picks the first maximum in row-major window order, which is
    the tie-break the backward pass relies on.
    """
    n, c, h, w = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, oh, ow, window, window),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    flat = view.reshape(n, c, oh, ow, window * window)
    idx = np.argmax(flat, axis=-1).astype(np.int32)
    y = np.take_along_axis(flat, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2d_backward(gy: np.ndarray, idx: np.ndarray, in_hw: tuple[int, int],
                       window: int, stride: int) -> np.ndarray:
    n, c, oh, ow = gy.shape
    h, w = in_hw
    gx = np.zeros((n, c, h, w), dtype=gy.dtype)
    if stride >= window:
        # disjoint windows: scatter via one-hot expansion, no index collisions
        onehot = np.zeros((n, c, oh, ow, window * window), dtype=gy.dtype)
        np.put_along_axis(onehot, idx[..., None].astype(np.intp), gy[..., None], axis=-1)
        block = onehot.reshape(n, c, oh, ow, window, window).transpose(0, 1, 2, 4, 3, 5)
        # the trailing stride block may overhang the input; that slack is zero
        span_h, span_w = min(oh * stride, h), min(ow * stride, w)
        spread = np.zeros((n, c, oh, stride, ow, stride), dtype=gy.dtype)
        spread[:, :, :, :window, :, :window] = block
        gx[:, :, :span_h, :span_w] = spread.reshape(n, c, oh * stride, ow * stride)[:, :, :span_h, :span_w]
        return gx
    ni, ci, ohi, owi = np.indices((n, c, oh, ow), sparse=False)
    hsrc = ohi * stride + idx // window
    wsrc = owi * stride + idx % window
    np.add.at(gx, (ni, ci, hsrc, wsrc), gy)
    return gx
