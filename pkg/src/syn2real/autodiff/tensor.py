"""Tape-based reverse-mode autodiff over numpy arrays.

A Tensor wraps a float32 (or, in check mode, float64) ndarray. Operations
record Nodes onto an ambient per-thread Graph; ``backward`` replays the tape
in reverse, accumulates gradients in float64 no matter the storage dtype,
writes ``.grad`` on the requires_grad leaves and then clears the tape.

The graph is created lazily by the first recorded op, so ordinary code never
touches Graph directly. ``with Graph():`` scopes an explicit tape when two
independent ones must coexist.

Shape discipline is strict: binary ops take operands of identical shape or a
python scalar, nothing in between. The only broadcasting in the whole system
is the bias add inside linear/conv layers. Every op checks its output for
non-finite values and raises NumericError instead of letting a NaN poison
the run.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import NumericError, ShapeError

_state = threading.local()


def _graph_slot() -> "Graph | None":
    return getattr(_state, "graph", None)


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class Graph:
    """Recording tape. One is ambient per thread; backward() empties it."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def record(self, node: "Node") -> None:
        self.nodes.append(node)

    def __enter__(self) -> "Graph":
        self._prev = _graph_slot()
        _state.graph = self
        return self

    def __exit__(self, *exc) -> None:
        _state.graph = self._prev
        del self._prev


def _ambient_graph() -> Graph:
    g = _graph_slot()
    if g is None:
        g = Graph()
        _state.graph = g
    return g


class no_grad:
    """Context manager: ops inside neither record nor mark outputs differentiable."""

    def __enter__(self) -> None:
        self._prev = _grad_enabled()
        _state.grad_enabled = False

    def __exit__(self, *exc) -> None:
        _state.grad_enabled = self._prev


class Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: "tuple[Tensor, ...]", output: "Tensor",
                 backward_fn: Callable[[np.ndarray], "Sequence[np.ndarray | None]"]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_ALLOWED = (np.float32, np.float64)


def _as_storage(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        arr = arr.astype(np.float32)
    if arr.ndim == 0:
        return arr  # ascontiguousarray would promote 0-d to shape (1,)
    return np.ascontiguousarray(arr)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by op '{op}'")
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_storage(data, dtype)
        if not np.isfinite(self.data).all():
            raise NumericError(f"non-finite values in tensor {name or '<unnamed>'}")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    # ---- plumbing ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        head = f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}"
        if self.requires_grad:
            head += ", requires_grad=True"
        if self.name:
            head += f", name={self.name!r}"
        return head + ")"

    # ---- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_scalar_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis: int | None = None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def square(self):
        return square(self)

    def backward(self) -> None:
        backward(self)


def _scalar_like(value, ref: Tensor) -> Tensor:
    return Tensor(np.full(ref.shape, float(value), dtype=ref.dtype))


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    _check_finite(out_data, op)
    needs = _grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = needs
    out.grad = None
    out.name = None
    if needs:
        _ambient_graph().record(Node(op, inputs, out, backward_fn))
    return out


def _binary_operands(a: Tensor, b, op: str) -> tuple[Tensor, "Tensor | float"]:
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise ShapeError(f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ "
                             "(no broadcasting outside layer bias adds)")
        if a.data.dtype != b.data.dtype:
            raise ShapeError(f"{op}: operand dtypes {a.data.dtype} and {b.data.dtype} differ")
        return a, b
    if isinstance(b, (int, float, np.integer, np.floating)):
        return a, float(b)
    raise TypeError(f"{op}: unsupported operand type {type(b).__name__}")


# ---- elementwise ops -------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")
    if isinstance(b, float):
        out = a.data + np.asarray(b, dtype=a.dtype)
        return _record("add", (a,), out, lambda g: (g,))
    out = a.data + b.data
    return _record("add", (a, b), out, lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")
    if isinstance(b, float):
        out = a.data - np.asarray(b, dtype=a.dtype)
        return _record("sub", (a,), out, lambda g: (g,))
    out = a.data - b.data
    return _record("sub", (a, b), out, lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    if isinstance(b, float):
        out = a.data * np.asarray(b, dtype=a.dtype)
        return _record("mul", (a,), out, lambda g, s=b: (g * np.asarray(s, dtype=g.dtype),))
    out = a.data * b.data
    ad, bd = a.data, b.data
    return _record("mul", (a, b), out, lambda g: (g * bd, g * ad))


def div(a: Tensor, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    if isinstance(b, float):
        if b == 0.0:
            raise NumericError("div: scalar divisor is zero")
        out = a.data / np.asarray(b, dtype=a.dtype)
        return _record("div", (a,), out, lambda g, s=b: (g / np.asarray(s, dtype=g.dtype),))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    ad, bd = a.data, b.data
    return _record("div", (a, b), out,
                   lambda g: (g / bd, -g * ad / (bd * bd)))


def neg(a: Tensor) -> Tensor:
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow becomes NumericError in _record
        out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g, o=out: (g * o,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log: argument has non-positive entries")
    out = np.log(a.data)
    ad = a.data
    return _record("log", (a,), out, lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record("square", (a,), ad * ad, lambda g: (g * (2.0 * ad).astype(g.dtype),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    mask = a.data > 0
    return _record("relu", (a,), out, lambda g: (np.where(mask, g, 0).astype(g.dtype),))


def sigmoid(a: Tensor) -> Tensor:
    # evaluated in float64 for symmetric tail behaviour, stored back narrow
    x = a.data.astype(np.float64)
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = s.astype(a.dtype)
    return _record("sigmoid", (a,), out,
                   lambda g: ((g.astype(np.float64) * s * (1.0 - s)).astype(g.dtype),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    if not lo < hi:
        raise ShapeError(f"clamp: need lo < hi, got ({lo}, {hi})")
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _record("clamp", (a,), out.astype(a.dtype),
                   lambda g: (np.where(mask, g, 0).astype(g.dtype),))


def maximum(a: Tensor, b) -> Tensor:
    """Elementwise max; ties send the gradient to the first argument."""
    a, b = _binary_operands(a, b, "maximum")
    if isinstance(b, float):
        out = np.maximum(a.data, np.asarray(b, dtype=a.dtype))
        mask = a.data >= b
        return _record("maximum", (a,), out,
                       lambda g: (np.where(mask, g, 0).astype(g.dtype),))
    out = np.maximum(a.data, b.data)
    mask = a.data >= b.data
    return _record("maximum", (a, b), out,
                   lambda g: (np.where(mask, g, 0).astype(g.dtype),
                              np.where(mask, 0, g).astype(g.dtype)))


# ---- shape ops --------------------------------------------------------------

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}") from err
    in_shape = a.data.shape
    return _record("reshape", (a,), np.ascontiguousarray(out),
                   lambda g: (g.reshape(in_shape),))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"narrow: axis {axis} out of range for rank {nd}")
    axis %= nd
    extent = a.data.shape[axis]
    if start < 0 or length < 1 or start + length > extent:
        raise ShapeError(f"narrow: slice [{start}:{start + length}] exceeds axis extent {extent}")
    sl = [slice(None)] * nd
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    in_shape = a.data.shape

    def back(g):
        gx = np.zeros(in_shape, dtype=g.dtype)
        gx[sl] = g
        return (gx,)

    return _record("narrow", (a,), np.ascontiguousarray(a.data[sl]), back)


# ---- reductions -------------------------------------------------------------

def tensor_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        out = np.sum(a.data, dtype=np.float64)
        out = np.asarray(out, dtype=a.dtype)
        if keepdims:
            out = out.reshape((1,) * a.data.ndim)
        in_shape = a.data.shape
        return _record("sum", (a,), out,
                       lambda g: (np.broadcast_to(g.reshape(()), in_shape).astype(g.dtype).copy(),))
    nd = a.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"sum: axis {axis} out of range for rank {nd}")
    axis %= nd
    out = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    in_shape = a.data.shape

    def back(g):
        gq = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gq, in_shape).astype(g.dtype).copy(),)

    return _record("sum", (a,), out, back)


def tensor_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis % a.data.ndim]
    if count == 0:
        raise ShapeError("mean: reduction over zero elements")
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---- fused classification loss ----------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels [N]."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be [N, K], got {logits.data.shape}")
    labels = np.asarray(labels)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: labels shape {labels.shape} does not match N={n}")
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= k:
        raise ShapeError("softmax_cross_entropy: labels must be ints in [0, K)")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    nll = -logp[np.arange(n), labels]
    out = np.asarray(nll.mean(), dtype=logits.dtype)
    probs = ez / denom

    def back(g):
        gz = probs.copy()
        gz[np.arange(n), labels] -= 1.0
        gz *= float(g.reshape(())) / n
        return (gz.astype(g.dtype),)

    return _record("softmax_cross_entropy", (logits,), out, back)


# ---- backward ---------------------------------------------------------------

def _accumulate(contribs: list[np.ndarray], dtype) -> np.ndarray:
    """Sum contributions in ascending consumer-recording order, f64 carry."""
    if len(contribs) == 1:
        return contribs[0]
    acc = np.zeros(contribs[0].shape, dtype=np.float64)
    for arr in reversed(contribs):  # appended during the reverse walk
        acc += arr
    return acc.astype(dtype)


def backward(loss: Tensor) -> None:
    """Reverse the ambient tape from ``loss``; leaves get ``.grad``, tape clears.

    The gradient arriving at a tensor used by several consumers is the sum of
    the per-consumer pieces taken in tape order, accumulated in float64, so a
    rerun on identical inputs reproduces gradients bit for bit.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    g = _graph_slot()
    if not loss.requires_grad:
        raise ShapeError("backward: loss does not require grad (created under no_grad, "
                         "or no differentiable inputs)")
    if g is None or not g.nodes:
        # requires_grad leaf used directly as the loss
        seed = np.ones_like(loss.data)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    contribs: dict[int, list[np.ndarray]] = {id(loss): [np.ones_like(loss.data)]}
    holders: dict[int, Tensor] = {id(loss): loss}
    produced = {id(node.output) for node in g.nodes}

    try:
        for node in reversed(g.nodes):
            out_id = id(node.output)
            if out_id not in contribs:
                continue
            gout = _accumulate(contribs.pop(out_id), node.output.dtype)
            holders.pop(out_id, None)
            grads_in = node.backward_fn(gout)
            for tin, gin in zip(node.inputs, grads_in):
                if gin is None or not tin.requires_grad:
                    continue
                if gin.shape != tin.data.shape:
                    raise ShapeError(f"backward of '{node.op}': gradient shape {gin.shape} "
                                     f"does not match input shape {tin.data.shape}")
                contribs.setdefault(id(tin), []).append(gin)
                holders[id(tin)] = tin
        for tid, pieces in contribs.items():
            tensor = holders[tid]
            if id(tensor) in produced:
                continue  # dead branch output that never reached the loss path
            total = _accumulate(pieces, tensor.dtype)
            _check_finite(total, "backward")
            tensor.grad = total if tensor.grad is None else (tensor.grad + total)
    finally:
        g.nodes.clear()
        if _graph_slot() is g:
            _state.graph = None


def collect_parameters(tensors: Iterable[Tensor]) -> list[Tensor]:
    """Filter to requires_grad tensors, preserving order, dropping duplicates."""
    seen: set[int] = set()
    out = []
    for t in tensors:
        if t.requires_grad and id(t) not in seen:
            seen.add(id(t))
            out.append(t)
    return out
