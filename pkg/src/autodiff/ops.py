"""Neural-network operations built on the tensor tape."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from src.autodiff.tensor import Tensor, add, as_tensor, make_op, mul, reshape
from src.errors import DimensionError

LAYER_NORM_EPS = 1e-5


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_op("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_op("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < max(x.ndim, 1):
        raise DimensionError(f"softmax axis {axis} out of range", x.shape)
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op("softmax", y, (x,), backward)


def normalize(x: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Zero-mean, unit-variance rows over the last axis (the pre-affine part of layer norm)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std

    def backward(g: np.ndarray):
        return (
            inv_std
            * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)),
        )

    return make_op("normalize", xhat, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    out = normalize(x)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise ValueError("concat needs at least one tensor")
    xs = [as_tensor(x) for x in xs]
    reference = xs[0]
    axis = axis % reference.ndim
    for x in xs[1:]:
        if x.ndim != reference.ndim or any(
            x.shape[i] != reference.shape[i] for i in range(x.ndim) if i != axis
        ):
            raise DimensionError("concat inputs disagree off the concat axis", reference.shape, x.shape)
    split_points = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g: np.ndarray):
        return np.split(g, split_points, axis=axis)

    return make_op("concat", np.concatenate([x.data for x in xs], axis=axis), tuple(xs), backward)


def stack_rows(xs: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into an n×d matrix."""
    return concat([reshape(x, (1, x.shape[0])) for x in xs], axis=0)


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    """Per-slice maximum; the subgradient goes to the first maximal element."""
    index = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, index, axis=axis).squeeze(axis)

    def backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, index, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return make_op("max", out, (x,), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"Dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("Training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return make_op("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] for a single logit vector."""
    if logits.ndim != 1:
        raise DimensionError("cross_entropy expects a logit vector", logits.shape)
    n_classes = logits.shape[0]
    if not 0 <= target < n_classes:
        raise ValueError(f"Target {target} out of range for {n_classes} classes")
    top = logits.data.max()
    shifted = np.exp(logits.data - top)
    total = shifted.sum()
    loss = (top - logits.data[target]) + np.log(total)

    def backward(g: np.ndarray):
        grad = shifted / total
        grad[target] -= 1.0
        return (g * grad,)

    return make_op("cross_entropy", np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


def one_hot(index: int, size: int) -> Tensor:
    if not 0 <= index < size:
        raise ValueError(f"Index {index} out of range for one-hot of size {size}")
    vector = np.zeros(size)
    vector[index] = 1.0
    return as_tensor(vector)
