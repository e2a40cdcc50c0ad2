from __future__ import annotations

import math
from typing import Any, Mapping

import numpy as np

from src.autodiff.tensor import Tensor
from src.errors import DimensionError


class AdamState:
    """Adam moments and step counter, keyed by parameter name."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def hyperparameters(self) -> dict[str, Any]:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step}

    @classmethod
    def from_hyperparameters(
        cls, values: Mapping[str, Any], m: dict[str, np.ndarray], v: dict[str, np.ndarray]
    ) -> AdamState:
        state = cls(lr=values["lr"], beta1=values["beta1"], beta2=values["beta2"], eps=values["eps"])
        state.step = int(values["step"])
        state.m = m
        state.v = v
        return state


def adam_step(
    params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray | None], state: AdamState
) -> None:
    """One bias-corrected Adam update, applied in place to `params`. Missing gradients count as zero."""
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    step_size = state.lr / correction1

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.shape:
            raise DimensionError(f"Gradient for {name} does not match its parameter", grad.shape, param.shape)
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        elif state.m[name].shape != param.shape:
            raise DimensionError(f"Optimizer moments for {name} do not match", state.m[name].shape, param.shape)

        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        if step_size != 0.0:
            param.data -= step_size * m / (np.sqrt(v / correction2) + state.eps)


def learning_rate_at(epoch: int, base_lr: float, decay_every: int = 10, factor: float = 0.1) -> float:
    """Step schedule: `base_lr` for epochs 1..decay_every, then scaled by `factor` every `decay_every` epochs."""
    if epoch < 1:
        raise ValueError(f"Epochs are counted from 1, got {epoch}")
    return base_lr * math.pow(factor, (epoch - 1) // decay_every)


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for param in params.values():
        param.zero_grad()


def collect_grads(params: Mapping[str, Tensor]) -> dict[str, np.ndarray | None]:
    return {name: param.grad for name, param in params.items()}
