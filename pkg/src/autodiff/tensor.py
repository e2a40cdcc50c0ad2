"""
Dense tensors with tape-based reverse-mode differentiation.

Operations on tensors are recorded on the active `Tape` (entered with a `with` block) whenever one of
their inputs requires a gradient. `Tape.backward` walks the recorded nodes in reverse creation order and
accumulates gradients into the `grad` field of the leaf tensors.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.errors import DimensionError

logger = logging.getLogger("autodiff")

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_local = threading.local()
_PRECISIONS = {"float64": np.float64, "float32": np.float32}
_dtype: type = np.float64


def set_precision(name: str) -> None:
    """Select the dtype of newly created tensors ("float64" or "float32")."""
    global _dtype
    if name not in _PRECISIONS:
        raise ValueError(f"Unknown precision {name!r}, expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


def default_dtype() -> type:
    return _dtype


def active_tape() -> Tape | None:
    return getattr(_local, "tape", None)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of differentiable operations. Confined to the thread that entered it."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._consumed = False
        self._previous: Tape | None = None

    def __enter__(self) -> Tape:
        self._previous = active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc_info) -> None:
        _local.tape = self._previous
        self._previous = None

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn) -> None:
        if self._consumed:
            raise RuntimeError("Cannot record on a tape after backward")
        for tensor in inputs:
            if tensor.tape is not None and tensor.tape is not self:
                raise RuntimeError(f"Input to {op} was recorded on a different tape")
        output.tape = self
        self.nodes.append(Node(op, inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(leaf) into every leaf that requires a gradient."""
        if self._consumed:
            raise RuntimeError("backward was already called on this tape")
        if loss.data.size != 1:
            raise ValueError(f"Loss must be a scalar, got shape {loss.shape}")
        if loss.tape is not self:
            raise ValueError("Loss was not recorded on this tape")
        self._consumed = True

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = pending.pop(id(node.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(node.inputs, node.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    grad = np.reshape(grad, tensor.shape)
                if tensor.tape is self:
                    key = id(tensor)
                    pending[key] = pending[key] + grad if key in pending else grad
                elif tensor.grad is None:
                    tensor.grad = np.array(grad, dtype=tensor.data.dtype)
                else:
                    tensor.grad = tensor.grad + grad
        logger.debug(f"Backward over {len(self.nodes)} nodes")


class Tensor:
    """A real array of rank 0 to 3. Rank 0 is reserved for scalar losses."""

    __array_priority__ = 1000

    def __init__(self, data: object, requires_grad: bool = False, dtype: type | None = None):
        array = np.array(data, dtype=dtype or _dtype)
        if array.ndim > 3:
            raise DimensionError("Tensors have at most three axes", array.shape)
        if any(extent < 1 for extent in array.shape):
            raise DimensionError("Tensor extents must be positive", array.shape)
        self.data = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> Tensor:
        tensor = cls.__new__(cls)
        tensor.data = data
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.tape = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: object) -> Tensor:
        return add(self, other)

    def __radd__(self, other: object) -> Tensor:
        return add(other, self)

    def __sub__(self, other: object) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: object) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: object) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: object) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: object) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index: object) -> Tensor:
        return getitem(self, index)


def as_tensor(value: object) -> Tensor:
    if isinstance(value, Tensor):
        return value
    array = np.asarray(value, dtype=_dtype)
    return Tensor._wrap(array, requires_grad=False)


def make_op(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap `data` as the output of `op`, recording it when a tape is active and any input needs grad."""
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=tracked)
    if tracked:
        tape.record(op, inputs, out, backward)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes that broadcasting expanded to reach it from `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        "div",
        a.data / b.data,
        (a, b),
        lambda g: (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(x: Tensor) -> Tensor:
    return make_op("neg", -x.data, (x,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a (m×k or k) with b (k×n)."""
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError("matmul operands do not align", a.shape, b.shape)

    def backward(g: np.ndarray):
        grad_b = np.outer(a.data, g) if a.ndim == 1 else a.data.T @ g
        return g @ b.data.T, grad_b

    return make_op("matmul", a.data @ b.data, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError("transpose expects a matrix", x.shape)
    return make_op("transpose", x.data.T, (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return make_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, index: object) -> Tensor:
    def backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return make_op("getitem", np.array(x.data[index]), (x,), backward)


def tensor_sum(x: Tensor, axis: int | None = None) -> Tensor:
    def backward(g: np.ndarray):
        if axis is None:
            return (np.full_like(x.data, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return make_op("sum", np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return mul(tensor_sum(x, axis), 1.0 / count)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_op("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return make_op("log", np.log(x.data), (x,), lambda g: (g / x.data,))
