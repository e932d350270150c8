"""Reverse-mode autodiff core: tensors, tape, layer ops, gradient checking."""

from .tensor import (
    Graph,
    Tensor,
    add,
    backward,
    clamp,
    collect_parameters,
    div,
    exp,
    log,
    maximum,
    mul,
    narrow,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax_cross_entropy,
    square,
    sub,
    tensor_mean,
    tensor_sum,
)
from .conv import conv2d, conv_transpose2d, linear, max_pool2d
from .check import GradCheckReport, grad_check
from .kernels import BACKEND as KERNEL_BACKEND

__all__ = [
    "Graph",
    "Tensor",
    "add",
    "backward",
    "clamp",
    "collect_parameters",
    "conv2d",
    "conv_transpose2d",
    "div",
    "exp",
    "grad_check",
    "GradCheckReport",
    "KERNEL_BACKEND",
    "linear",
    "log",
    "max_pool2d",
    "maximum",
    "mul",
    "narrow",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "sigmoid",
    "softmax_cross_entropy",
    "square",
    "sub",
    "tensor_mean",
    "tensor_sum",
]
