"""Finite-difference gradient checking.

Everything runs in float64: the checked function is evaluated on float64
tensors and compared against central differences, so the discretization
error of the check itself stays far below the tolerances being asserted.

Relative error per element:  |a - n| / max(1e-8, |a| + |n|)
with a the analytic gradient and n the numeric estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    mean_rel_err: float
    n_elements: int
    worst_input: int
    worst_flat_index: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def _rel_err(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients of ``fn(*inputs)`` against central differences.

    Every tensor in ``inputs`` must be float64 with requires_grad set; the
    perturbation loop touches each of its elements once, so keep the shapes
    small. ``fn`` must be deterministic and must not mutate its arguments.
    """
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("grad_check: no inputs to differentiate")
    for i, t in enumerate(inputs):
        if t.dtype != np.float64:
            raise ShapeError(f"grad_check: input {i} is {t.dtype}, checks run in float64 only")
        if not t.requires_grad:
            raise ShapeError(f"grad_check: input {i} does not require grad")
        t.grad = None

    out = fn(*inputs)
    if out.size != 1:
        raise ShapeError(f"grad_check: fn must return a scalar, got shape {out.shape}")
    backward(out)
    analytic = []
    for i, t in enumerate(inputs):
        if t.grad is None:
            raise ShapeError(f"grad_check: input {i} received no gradient; "
                             "is it disconnected from the output?")
        analytic.append(t.grad.copy())
        t.grad = None

    def eval_scalar() -> float:
        with no_grad():
            return fn(*inputs).item()

    max_err = -1.0
    err_sum = 0.0
    count = 0
    worst_input = -1
    worst_flat = -1
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        num = np.empty(flat.shape, dtype=np.float64)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = eval_scalar()
            flat[j] = orig - eps
            f_minus = eval_scalar()
            flat[j] = orig
            num[j] = (f_plus - f_minus) / (2.0 * eps)
        errs = _rel_err(analytic[i].reshape(-1), num)
        j_worst = int(np.argmax(errs))
        if errs[j_worst] > max_err:
            max_err = float(errs[j_worst])
            worst_input = i
            worst_flat = j_worst
        err_sum += float(errs.sum())
        count += errs.size
    return GradCheckReport(
        max_rel_err=max_err,
        mean_rel_err=err_sum / count,
        n_elements=count,
        worst_input=worst_input,
        worst_flat_index=worst_flat,
    )
