"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from src.autodiff.tensor import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numerical_gradient(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    h: float = 1e-5,
    indices: list[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """Central differences of `loss_fn` w.r.t. `param`; entries outside `indices` are left at zero."""
    grad = np.zeros_like(param.data)
    targets = indices if indices is not None else list(np.ndindex(param.shape))
    for index in targets:
        original = param.data[index]
        param.data[index] = original + h
        upper = loss_fn().item()
        param.data[index] = original - h
        lower = loss_fn().item()
        param.data[index] = original
        grad[index] = (upper - lower) / (2.0 * h)
    return grad


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Compare tape gradients of `loss_fn` with central differences.

    Args:
        loss_fn: Builds a scalar loss from the current parameter values. Must be deterministic.
        params: Named leaf tensors to check.
        h: Finite-difference step.
        max_entries: If set, check at most this many randomly chosen entries per parameter.
        rng: Generator used to choose the entries.

    Returns:
        Maximum relative error per parameter name.
    """
    for param in params.values():
        param.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)

    errors: dict[str, float] = {}
    for name, param in params.items():
        analytic = param.grad if param.grad is not None else np.zeros_like(param.data)
        indices = None
        if max_entries is not None and param.data.size > max_entries:
            generator = rng or np.random.default_rng(0)
            flat = generator.choice(param.data.size, size=max_entries, replace=False)
            indices = [np.unravel_index(int(i), param.shape) for i in flat]
        numeric = numerical_gradient(loss_fn, param, h=h, indices=indices)
        if indices is not None:
            picked = tuple(np.array(axis) for axis in zip(*indices))
            errors[name] = relative_error(analytic[picked], numeric[picked])
        else:
            errors[name] = relative_error(analytic, numeric)
    return errors
