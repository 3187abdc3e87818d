"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape` whenever at least one
input requires a gradient::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = (x @ w).relu().sum()
    backward(tape, loss)
    w.adjoint  # d loss / d w

Broadcasting is deliberately narrow: a scalar (shape ``()``) combines with any
tensor, and a row vector (shape ``(K,)`` or ``(1, K)``) combines with an
``(N, K)`` matrix. Anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DomainError, ShapeError, StateError

__all__ = [
    "Tensor",
    "Tape",
    "forward_op",
    "backward",
    "OP_KINDS",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "exp",
    "log",
    "tsum",
    "mean",
    "transpose",
    "concat_rows",
    "row_softmax",
    "row_log_softmax",
    "clamp_min",
    "l2_normalize",
]


class Tensor:
    """Immutable float64 array with an optional adjoint buffer."""

    __slots__ = ("data", "requires_grad", "adjoint", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if not np.isfinite(arr).all():
            raise DomainError("tensor data must be finite")
        self._init(arr, requires_grad)

    def _init(self, arr: np.ndarray, requires_grad: bool) -> None:
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.adjoint = np.zeros_like(arr) if requires_grad else None
        self._tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t._init(np.asarray(arr, dtype=np.float64, order="C"), requires_grad)
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A leaf sharing this tensor's values, cut off from any tape."""
        return Tensor._wrap(self.data)

    def zero_adjoint(self) -> None:
        if self.requires_grad:
            self.adjoint = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __add__(self, other):
        return forward_op("add", self, other)

    def __radd__(self, other):
        return forward_op("add", other, self)

    def __sub__(self, other):
        return forward_op("sub", self, other)

    def __rsub__(self, other):
        return forward_op("sub", other, self)

    def __mul__(self, other):
        return forward_op("mul", self, other)

    def __rmul__(self, other):
        return forward_op("mul", other, self)

    def __truediv__(self, other):
        return forward_op("div", self, other)

    def __rtruediv__(self, other):
        return forward_op("div", other, self)

    def __neg__(self):
        return forward_op("neg", self)

    def __matmul__(self, other):
        return forward_op("matmul", self, other)

    @property
    def T(self):
        return forward_op("transpose", self)

    def relu(self):
        return forward_op("relu", self)

    def exp(self):
        return forward_op("exp", self)

    def log(self):
        return forward_op("log", self)

    def sum(self, axis=None):
        return forward_op("sum", self, axis=axis)

    def mean(self, axis=None):
        return forward_op("mean", self, axis=axis)


@dataclass
class _Node:
    kind: str
    inputs: tuple
    output: Tensor
    saved: dict
    grad_fn: Callable


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


@dataclass
class Tape:
    """Ordered record of differentiable operations; consumed by one backward pass."""

    nodes: list = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise StateError("tape already consumed by backward()")
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse across threads
            raise StateError("tape exited out of order")

    def __len__(self):
        return len(self.nodes)


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


# -- broadcasting -------------------------------------------------------------


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if a == ():
        return b
    if b == ():
        return a
    for row, mat in ((a, b), (b, a)):
        if len(mat) == 2 and (row == (mat[1],) or row == (1, mat[1])):
            return mat
    raise ShapeError(f"cannot broadcast shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if len(shape) == 1:
        return g.sum(axis=0)
    return g.sum(axis=0, keepdims=True)


# -- primitive implementations --------------------------------------------------
# Each forward returns (output array, saved dict); each backward maps
# (upstream gradient, inputs data, output data, saved) to per-input gradients.


def _fw_add(a, b, **_):
    _broadcast_shape(a.shape, b.shape)
    return a + b, {}


def _bw_add(g, ins, out, saved):
    a, b = ins
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _fw_sub(a, b, **_):
    _broadcast_shape(a.shape, b.shape)
    return a - b, {}


def _bw_sub(g, ins, out, saved):
    a, b = ins
    return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


def _fw_mul(a, b, **_):
    _broadcast_shape(a.shape, b.shape)
    return a * b, {}


def _bw_mul(g, ins, out, saved):
    a, b = ins
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _fw_div(a, b, **_):
    _broadcast_shape(a.shape, b.shape)
    if np.any(b == 0.0):
        raise DomainError("division by zero")
    return a / b, {}


def _bw_div(g, ins, out, saved):
    a, b = ins
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _fw_neg(a, **_):
    return -a, {}


def _bw_neg(g, ins, out, saved):
    return (-g,)


def _fw_matmul(a, b, **_):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")
    return a @ b, {}


def _bw_matmul(g, ins, out, saved):
    a, b = ins
    return g @ b.T, a.T @ g


def _fw_relu(a, **_):
    return np.maximum(a, 0.0), {}


def _bw_relu(g, ins, out, saved):
    return (g * (ins[0] > 0.0),)


def _fw_exp(a, **_):
    return np.exp(a), {}


def _bw_exp(g, ins, out, saved):
    return (g * out,)


def _fw_log(a, **_):
    if np.any(a <= 0.0):
        raise DomainError("log of a nonpositive value")
    return np.log(a), {}


def _bw_log(g, ins, out, saved):
    return (g / ins[0],)


def _check_axis(a, axis):
    if axis is not None and not (0 <= axis < a.ndim):
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")


def _fw_sum(a, axis=None, **_):
    _check_axis(a, axis)
    return np.asarray(a.sum(axis=axis)), {}


def _bw_sum(g, ins, out, saved, axis=None):
    a = ins[0]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _fw_mean(a, axis=None, **_):
    _check_axis(a, axis)
    if a.size == 0:
        raise ShapeError("mean of an empty tensor")
    return np.asarray(a.mean(axis=axis)), {}


def _bw_mean(g, ins, out, saved, axis=None):
    a = ins[0]
    count = a.size if axis is None else a.shape[axis]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, a.shape).copy(),)


def _fw_transpose(a, **_):
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return a.T.copy(), {}


def _bw_transpose(g, ins, out, saved):
    return (g.T,)


def _fw_concat_rows(*xs, **_):
    cols = {x.shape[1:] for x in xs}
    if any(x.ndim != 2 for x in xs) or len(cols) != 1:
        raise ShapeError(f"concat_rows needs matrices with equal widths, got {[x.shape for x in xs]}")
    return np.concatenate(xs, axis=0), {"rows": [x.shape[0] for x in xs]}


def _bw_concat_rows(g, ins, out, saved):
    splits = np.cumsum(saved["rows"])[:-1]
    return tuple(np.split(g, splits, axis=0))


def _fw_row_softmax(a, **_):
    if a.ndim not in (1, 2):
        raise ShapeError(f"row_softmax needs rank 1 or 2, got shape {a.shape}")
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True), {}


def _bw_row_softmax(g, ins, out, saved):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def _fw_row_log_softmax(a, **_):
    if a.ndim not in (1, 2):
        raise ShapeError(f"row_log_softmax needs rank 1 or 2, got shape {a.shape}")
    z = a - a.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True)), {}


def _bw_row_log_softmax(g, ins, out, saved):
    return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)


def _fw_clamp_min(a, floor=0.0, **_):
    return np.maximum(a, floor), {"floor": floor}


def _bw_clamp_min(g, ins, out, saved, floor=0.0):
    return (g * (ins[0] > floor),)


def _fw_l2_normalize(a, axis=-1, eps=1e-12, **_):
    if a.ndim == 0 or not (-a.ndim <= axis < a.ndim):
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    norm = np.sqrt((a * a).sum(axis=axis, keepdims=True))
    keep = norm < eps
    safe = np.where(keep, 1.0, norm)
    return np.where(keep, a, a / safe), {"norm": safe, "keep": keep}


def _bw_l2_normalize(g, ins, out, saved, axis=-1, eps=1e-12):
    keep, norm = saved["keep"], saved["norm"]
    proj = (g - out * (g * out).sum(axis=axis, keepdims=True)) / norm
    return (np.where(keep, g, proj),)


_OPS = {
    "add": (_fw_add, _bw_add),
    "sub": (_fw_sub, _bw_sub),
    "mul": (_fw_mul, _bw_mul),
    "div": (_fw_div, _bw_div),
    "neg": (_fw_neg, _bw_neg),
    "matmul": (_fw_matmul, _bw_matmul),
    "relu": (_fw_relu, _bw_relu),
    "exp": (_fw_exp, _bw_exp),
    "log": (_fw_log, _bw_log),
    "sum": (_fw_sum, _bw_sum),
    "mean": (_fw_mean, _bw_mean),
    "transpose": (_fw_transpose, _bw_transpose),
    "concat_rows": (_fw_concat_rows, _bw_concat_rows),
    "row_softmax": (_fw_row_softmax, _bw_row_softmax),
    "row_log_softmax": (_fw_row_log_softmax, _bw_row_log_softmax),
    "clamp_min": (_fw_clamp_min, _bw_clamp_min),
    "l2_normalize": (_fw_l2_normalize, _bw_l2_normalize),
}

OP_KINDS = tuple(_OPS)


def forward_op(kind: str, *inputs, **attrs) -> Tensor:
    """Apply primitive ``kind`` to ``inputs``; record it when a gradient is needed.

    Raises ShapeError for nonconforming operands and DomainError for log/div
    outside their domain or any non-finite result.
    """
    try:
        fw, bw = _OPS[kind]
    except KeyError:
        raise ContractError(f"unknown op kind {kind!r}") from None
    ts = tuple(_as_tensor(x) for x in inputs)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out, saved = fw(*(t.data for t in ts), **attrs)
    if not np.isfinite(out).all():
        raise DomainError(f"{kind} produced a non-finite value")
    tape = _active_tape()
    record = tape is not None and any(t.requires_grad for t in ts)
    result = Tensor._wrap(out, requires_grad=record)
    if record:
        result._tape = tape

        def grad_fn(g, _bw=bw, _ins=ts, _out=result, _saved=saved, _attrs=attrs):
            return _bw(g, tuple(t.data for t in _ins), _out.data, _saved, **_attrs)

        tape.nodes.append(_Node(kind, ts, result, saved, grad_fn))
    return result


def backward(tape: Tape, root: Tensor) -> None:
    """Fill ``adjoint`` of every grad-requiring tensor on ``tape`` with d root / d tensor.

    Leaf adjoints are reset before accumulation. The tape cannot be reused.
    """
    if tape.consumed:
        raise StateError("tape already consumed by backward()")
    if root.shape != ():
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if root._tape is not tape:
        raise ContractError("root was not produced on this tape")
    tape.consumed = True

    for node in tape.nodes:
        node.output.adjoint = np.zeros_like(node.output.data)
        for t in node.inputs:
            if t.requires_grad and t._tape is None:
                t.adjoint = np.zeros_like(t.data)

    root.adjoint = np.ones((), dtype=np.float64)
    live = {id(root)}
    for node in reversed(tape.nodes):
        if id(node.output) not in live:
            continue
        grads = node.grad_fn(node.output.adjoint)
        for t, gi in zip(node.inputs, grads):
            if t.requires_grad:
                t.adjoint = t.adjoint + np.reshape(gi, t.shape)
                live.add(id(t))
    tape.nodes.clear()


# -- functional spellings ----------------------------------------------------------


def matmul(a, b):
    return forward_op("matmul", a, b)


def add(a, b):
    return forward_op("add", a, b)


def sub(a, b):
    return forward_op("sub", a, b)


def mul(a, b):
    return forward_op("mul", a, b)


def div(a, b):
    return forward_op("div", a, b)


def neg(a):
    return forward_op("neg", a)


def relu(a):
    return forward_op("relu", a)


def exp(a):
    return forward_op("exp", a)


def log(a):
    return forward_op("log", a)


def tsum(a, axis=None):
    return forward_op("sum", a, axis=axis)


def mean(a, axis=None):
    return forward_op("mean", a, axis=axis)


def transpose(a):
    return forward_op("transpose", a)


def concat_rows(*xs):
    return forward_op("concat_rows", *xs)


def row_softmax(a):
    return forward_op("row_softmax", a)


def row_log_softmax(a):
    return forward_op("row_log_softmax", a)


def clamp_min(a, floor: float):
    return forward_op("clamp_min", a, floor=float(floor))


def l2_normalize(x, axis: int = -1, eps: float = 1e-12):
    """Scale each slice along ``axis`` to unit Euclidean norm.

    Slices whose norm is below ``eps`` pass through unchanged.
    """
    return forward_op("l2_normalize", x, axis=axis, eps=float(eps))
