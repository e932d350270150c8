"""Differentiable layer ops: conv2d, conv_transpose2d, linear, max_pool2d.

Convolution here means cross-correlation (no kernel flip), the convention
every deep learning stack uses. conv2d takes its kernel as [Cout, Cin, kh, kw];
conv_transpose2d as [Cin, Cout, kh, kw] and is the exact adjoint of conv2d
with the same geometry:  <conv2d(x, k), y> == <x, conv_transpose2d(y, k)>.

Bias adds broadcast a [C] vector over [N, C, H, W] (or [N, C] for linear);
this is the single sanctioned broadcast in the system.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import kernels
from .tensor import Tensor, _record


def _expect_rank(t: Tensor, rank: int, what: str) -> None:
    if t.data.ndim != rank:
        raise ShapeError(f"{what}: expected rank {rank}, got shape {t.data.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    _expect_rank(x, 4, "conv2d input")
    _expect_rank(weight, 4, "conv2d weight")
    n, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input has {cin} channels, weight expects {cin_w}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {padding})")
    oh, ow = kernels.conv2d_out_hw(h, w, kh, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} "
                         f"with stride {stride}, padding {padding}")
    out = kernels.conv2d_forward(x.data, weight.data, stride, padding)
    inputs: tuple[Tensor, ...]
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({cout},)")
        out = out + bias.data.reshape(1, cout, 1, 1)
        inputs = (x, weight, bias)
    else:
        inputs = (x, weight)
    xd, wd = x.data, weight.data

    def back(g):
        gx = kernels.conv2d_grad_input(g, wd, stride, padding, (h, w))
        gw = kernels.conv2d_grad_kernel(g, xd, stride, padding, (kh, kw))
        if bias is None:
            return (gx, gw)
        gb = np.sum(g, axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
        return (gx, gw, gb)

    return _record("conv2d", inputs, out, back)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    _expect_rank(x, 4, "conv_transpose2d input")
    _expect_rank(weight, 4, "conv_transpose2d weight")
    n, cin, h, w = x.data.shape
    cin_w, cout, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv_transpose2d: input has {cin} channels, weight expects {cin_w}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv_transpose2d: bad stride/padding ({stride}, {padding})")
    oh, ow = kernels.conv_transpose2d_out_hw(h, w, kh, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv_transpose2d: geometry ({h}x{w}, k={kh}x{kw}, s={stride}, "
                         f"p={padding}) yields empty output {oh}x{ow}")
    out = kernels.conv_transpose2d_forward(x.data, weight.data, stride, padding)
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ShapeError(f"conv_transpose2d: bias shape {bias.data.shape} != ({cout},)")
        out = out + bias.data.reshape(1, cout, 1, 1)
        inputs: tuple[Tensor, ...] = (x, weight, bias)
    else:
        inputs = (x, weight)
    xd, wd = x.data, weight.data

    def back(g):
        gx = kernels.conv_transpose2d_grad_input(g, wd, stride, padding)
        gw = kernels.conv_transpose2d_grad_kernel(g, xd, stride, padding)
        if bias is None:
            return (gx, gw)
        gb = np.sum(g, axis=(0, 2, 3), dtype=np.float64).astype(g.dtype)
        return (gx, gw, gb)

    return _record("conv_transpose2d", inputs, out, back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ weight.T + bias, with x [N, K] and weight [D, K]."""
    _expect_rank(x, 2, "linear input")
    _expect_rank(weight, 2, "linear weight")
    n, k = x.data.shape
    d, k_w = weight.data.shape
    if k != k_w:
        raise ShapeError(f"linear: input features {k} != weight features {k_w}")
    out64 = x.data.astype(np.float64) @ weight.data.astype(np.float64).T
    out = out64.astype(x.dtype)
    if bias is not None:
        if bias.data.shape != (d,):
            raise ShapeError(f"linear: bias shape {bias.data.shape} != ({d},)")
        out = out + bias.data.reshape(1, d)
        inputs: tuple[Tensor, ...] = (x, weight, bias)
    else:
        inputs = (x, weight)
    xd, wd = x.data, weight.data

    def back(g):
        g64 = g.astype(np.float64)
        gx = (g64 @ wd.astype(np.float64)).astype(g.dtype)
        gw = (g64.T @ xd.astype(np.float64)).astype(g.dtype)
        if bias is None:
            return (gx, gw)
        gb = np.sum(g, axis=0, dtype=np.float64).astype(g.dtype)
        return (gx, gw, gb)

    return _record("linear", inputs, out, back)


def max_pool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Max over window x window patches; ties resolve to the first position
    in row-major window order, and only that position receives gradient."""
    _expect_rank(x, 4, "max_pool2d input")
    if stride is None:
        stride = window
    if window < 1 or stride < 1:
        raise ShapeError(f"max_pool2d: bad window/stride ({window}, {stride})")
    n, c, h, w = x.data.shape
    if h < window or w < window:
        raise ShapeError(f"max_pool2d: window {window} exceeds input {h}x{w}")
    out, idx = kernels.maxpool2d_forward(x.data, window, stride)

    def back(g):
        return (kernels.maxpool2d_backward(g, idx, (h, w), window, stride),)

    return _record("max_pool2d", (x,), out, back)
