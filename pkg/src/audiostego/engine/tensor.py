"""Dense float32 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded in order;
:func:`backward` replays them in reverse and accumulates gradients into the
``grad`` buffers of every leaf tensor created with ``requires_grad=True``.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPE = np.float32


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


class ContractError(RuntimeError):
    """Raised when an operation is called outside its preconditions."""


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {where}")


class Tensor:
    """An n-dimensional float32 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=DTYPE, copy=True)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr, dtype=DTYPE)
        t.requires_grad = False
        t.grad = None
        t.name = ""
        t._tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("output", "inputs", "backward_fn", "name")

    def __init__(self, output, inputs, backward_fn, name):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.name = name


_local = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager; operations on tensors that need gradients are
    appended while the tape is active.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        """Drop recorded operations so their buffers can be freed."""
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()


def _tracked(t: Tensor, tape: Tape) -> bool:
    return t.requires_grad and (t._tape is None or t._tape is tape)


def record(
    out: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    name: str,
) -> Tensor:
    """Wrap ``out`` as a tensor and, if needed, record it on the active tape.

    ``backward_fn`` maps the upstream gradient to one gradient (or None) per
    input, each shaped like that input.
    """
    check_finite(out, name)
    result = Tensor._wrap(out)
    tape = _active_tape()
    if tape is not None and any(_tracked(t, tape) for t in inputs):
        result.requires_grad = True
        result._tape = tape
        tape.nodes.append(_Node(result, tuple(inputs), backward_fn, name))
    return result


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every tracked leaf tensor."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape or not tape.nodes:
        raise ContractError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not _tracked(t, tape):
                continue
            gi = np.asarray(gi, dtype=DTYPE)
            if gi.shape != t.shape:
                raise DimensionError(
                    f"{node.name}: gradient shape {gi.shape} != input shape {t.shape}"
                )
            check_finite(gi, f"backward of {node.name}")
            if t._tape is tape:
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
            else:
                t.grad = gi.copy() if t.grad is None else t.grad + gi


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return record(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return record(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        "sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return record(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = DTYPE(c)
    return record(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a: Tensor) -> Tensor:
    return record(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def abs_(a: Tensor) -> Tensor:
    return record(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,), "abs")


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(dtype=np.float64), dtype=DTYPE)
    return record(out, (a,), lambda g: (np.full(a.shape, g, dtype=DTYPE),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean(dtype=np.float64), dtype=DTYPE)
    return record(out, (a,), lambda g: (np.full(a.shape, g / n, dtype=DTYPE),), "mean")


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return record(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inverse = np.argsort(axes)
    return record(
        np.ascontiguousarray(a.data.transpose(axes)), (a,),
        lambda g: (g.transpose(inverse),), "transpose",
    )


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def grad_fn(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        if _has_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return record(np.array(out, dtype=DTYPE), (a,), grad_fn, "getitem")


def _has_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def grad_fn(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return record(out, tuple(tensors), grad_fn, "concat")


def leaky_relu(x: Tensor, alpha: float) -> Tensor:
    alpha = DTYPE(alpha)
    slope = np.where(x.data >= 0, DTYPE(1.0), alpha).astype(DTYPE)
    return record(x.data * slope, (x,), lambda g: (g * slope,), "leaky_relu")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = ((x.data >= lo) & (x.data <= hi)).astype(DTYPE)
    return record(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")
