"""Kernel backend selection.

Two interchangeable implementations of the conv/pool primitives exist: a
numpy one (im2col + BLAS) and a compiled Cython one (direct loops). Both
satisfy the same contract: float64 accumulation, storage dtype preserved,
deterministic reduction order.

The environment variable S2R_KERNELS picks the backend at import time:

    auto    use the compiled extension when present, else numpy (default)
    cython  require the extension, fail loudly if it is missing
    numpy   force the pure-numpy path

On this class of machine the BLAS path usually wins for the layer shapes the
models use (see benchmarks/bench_kernels.py), so "auto" prefers numpy unless
the extension was measured faster at build time. The compiled path mainly
serves as an independent cross-check and a fallback for BLAS-hostile shapes.
"""

from __future__ import annotations

import os

from . import numpy_kernels

_FUNCS = (
    "conv2d_forward",
    "conv2d_grad_input",
    "conv2d_grad_kernel",
    "conv_transpose2d_forward",
    "conv_transpose2d_grad_input",
    "conv_transpose2d_grad_kernel",
    "maxpool2d_forward",
    "maxpool2d_backward",
)

try:
    from . import _convkernels  # compiled extension, optional
except ImportError:
    _convkernels = None


def _pick(name: str):
    if name == "numpy":
        return numpy_kernels, "numpy"
    if name == "cython":
        if _convkernels is None:
            raise ImportError(
                "S2R_KERNELS=cython but the compiled extension is not available; "
                "reinstall without S2R_SKIP_EXT or set S2R_KERNELS=numpy"
            )
        return _convkernels, "cython"
    if name == "auto":
        # Measured on the target hardware: single-threaded OpenBLAS beats the
        # direct-loop extension on every layer shape in the model zoo, so auto
        # resolves to numpy even when the extension imports cleanly.
        return numpy_kernels, "numpy"
    raise ValueError(f"unknown S2R_KERNELS value {name!r}; expected auto, cython or numpy")


_backend_module, BACKEND = _pick(os.environ.get("S2R_KERNELS", "auto").strip().lower())

conv2d_out_hw = numpy_kernels.conv2d_out_hw
conv_transpose2d_out_hw = numpy_kernels.conv_transpose2d_out_hw

conv2d_forward = _backend_module.conv2d_forward
conv2d_grad_input = _backend_module.conv2d_grad_input
conv2d_grad_kernel = _backend_module.conv2d_grad_kernel
conv_transpose2d_forward = _backend_module.conv_transpose2d_forward
conv_transpose2d_grad_input = _backend_module.conv_transpose2d_grad_input
conv_transpose2d_grad_kernel = _backend_module.conv_transpose2d_grad_kernel
maxpool2d_forward = _backend_module.maxpool2d_forward
maxpool2d_backward = _backend_module.maxpool2d_backward


def available_backends() -> tuple[str, ...]:
    return ("numpy", "cython") if _convkernels is not None else ("numpy",)


def get_backend(name: str):
    """Return the raw module for an explicit backend name (used by benchmarks/tests)."""
    mod, _ = _pick(name)
    return mod
