"""
Attention and aggregation blocks.

Matrices passed between blocks are D×K (features by snippets), the layout the banks are built in.
Every block is a plain function over a parameter dataclass; parameters are collected by name through
`ParamGroup.named_parameters`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from src.autodiff import (
    Tensor,
    concat,
    dropout,
    layer_norm,
    max_over_axis,
    relu,
    sigmoid,
    softmax,
    stack_rows,
    tanh,
)
from src.errors import ConfigurationError, DimensionError
from src.models import Coupling, ModelConfig


class ParamGroup:
    """Mixin for dataclasses whose fields are tensors, nested groups or lists of them."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        found: dict[str, Tensor] = {}
        for field in fields(self):
            _collect(getattr(self, field.name), f"{prefix}{field.name}", found)
        return found


def _collect(value: object, key: str, found: dict[str, Tensor]) -> None:
    if isinstance(value, Tensor):
        found[key] = value
    elif isinstance(value, ParamGroup):
        found.update(value.named_parameters(f"{key}."))
    elif isinstance(value, list):
        for index, item in enumerate(value):
            _collect(item, f"{key}.{index}", found)


def init_weight(fan_in: int, fan_out: int, rng: np.random.Generator) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


@dataclass
class Linear(ParamGroup):
    weight: Tensor
    bias: Tensor | None = None

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True) -> Linear:
        return cls(
            weight=init_weight(fan_in, fan_out, rng),
            bias=Tensor(np.zeros(fan_out), requires_grad=True) if bias else None,
        )

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError("Linear input does not match the weight", x.shape, self.weight.shape)
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


@dataclass
class LayerNormParams(ParamGroup):
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, dim: int) -> LayerNormParams:
        return cls(gain=Tensor(np.ones(dim), requires_grad=True), bias=Tensor(np.zeros(dim), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


@dataclass
class NLBParams(ParamGroup):
    theta: Linear
    phi: Linear
    g: Linear
    out: Linear
    ln_in: LayerNormParams
    ln_out: LayerNormParams
    dropout_rate: float = 0.0

    @classmethod
    def init(cls, dim: int, attn_dim: int, dropout_rate: float, rng: np.random.Generator) -> NLBParams:
        return cls(
            theta=Linear.init(dim, attn_dim, rng, bias=False),
            phi=Linear.init(dim, attn_dim, rng, bias=False),
            g=Linear.init(dim, attn_dim, rng, bias=False),
            out=Linear.init(attn_dim, dim, rng, bias=False),
            ln_in=LayerNormParams.init(dim),
            ln_out=LayerNormParams.init(dim),
            dropout_rate=dropout_rate,
        )

    @property
    def dim(self) -> int:
        return self.theta.in_features

    @property
    def attn_dim(self) -> int:
        return self.theta.out_features


def nlb_forward(
    context: Tensor,
    query: Tensor,
    p: NLBParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_attention: bool = False,
) -> Tensor | tuple[Tensor, Tensor]:
    """Non-local block: `query` (D×Kq) attends over `context` (D×Kc); returns D×Kq.

    With `return_attention` the Kq×Kc attention matrix is returned as well.
    """
    if context.ndim != 2 or query.ndim != 2 or context.shape[0] != p.dim or query.shape[0] != p.dim:
        raise DimensionError(f"Non-local block expects {p.dim}-dim inputs", context.shape, query.shape)
    q_rows = query.T
    q_norm = p.ln_in(q_rows)
    c_norm = p.ln_in(context.T)
    scores = p.theta(q_norm) @ p.phi(c_norm).T
    attention = softmax(scores * (1.0 / math.sqrt(p.attn_dim)), axis=-1)
    update = p.out(attention @ p.g(c_norm))
    out = p.ln_out(q_rows + dropout(update, p.dropout_rate, training, rng)).T
    return (out, attention) if return_attention else out


@dataclass
class CBParams(ParamGroup):
    nlb_self: NLBParams
    nlb_cross: NLBParams
    fuse_recent: Linear
    fuse_spanning: Linear

    @classmethod
    def init(cls, dim: int, config: ModelConfig, rng: np.random.Generator) -> CBParams:
        attn_dim = config.attn_dim or max(1, dim // 2)
        return cls(
            nlb_self=NLBParams.init(dim, attn_dim, config.dropout, rng),
            nlb_cross=NLBParams.init(dim, attn_dim, config.dropout, rng),
            fuse_recent=Linear.init(2 * dim, config.hidden, rng),
            fuse_spanning=Linear.init(2 * dim, config.hidden, rng),
        )


def snippet_max(matrix: Tensor) -> Tensor:
    """Reduce a D×K matrix to a D-vector by max over snippets."""
    return max_over_axis(matrix, axis=1)


def cb_forward(
    recent: Tensor,
    spanning: Tensor,
    p: CBParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Coupling block over one recent matrix and one spanning matrix; returns two H-vectors."""
    if config.coupling is Coupling.NONE:
        pooled = concat([snippet_max(recent), snippet_max(spanning)])
        return relu(p.fuse_recent(pooled)), relu(p.fuse_spanning(pooled))

    def attend(context: Tensor, query: Tensor, nlb: NLBParams) -> Tensor:
        if not config.use_nlb:
            return query
        return nlb_forward(context, query, nlb, training, rng)

    if config.coupling is Coupling.FULL:
        spanning_att = attend(spanning, spanning, p.nlb_self)
        recent_att = attend(spanning_att, recent, p.nlb_cross)
    elif config.coupling is Coupling.SPANNING_ONLY:
        spanning_att = attend(spanning, spanning, p.nlb_self)
        recent_att = attend(spanning_att, spanning_att, p.nlb_cross)
    else:
        recent_self = attend(recent, recent, p.nlb_self)
        recent_att = attend(recent_self, recent, p.nlb_cross)
        spanning_att = spanning

    recent_vec = snippet_max(recent_att)
    recent_out = relu(p.fuse_recent(concat([recent_vec, snippet_max(recent)])))
    spanning_out = relu(p.fuse_spanning(concat([recent_vec, snippet_max(spanning_att)])))
    return recent_out, spanning_out


@dataclass
class TABParams(ParamGroup):
    blocks: list[CBParams]
    fuse_recent: Linear
    fuse_spanning: Linear | None = None

    @classmethod
    def init(cls, dim: int, n_scales: int, config: ModelConfig, rng: np.random.Generator) -> TABParams:
        blocks = [CBParams.init(dim, config, rng) for _ in range(n_scales)]
        width = n_scales * config.hidden
        return cls(
            blocks=blocks,
            fuse_recent=Linear.init(width, config.hidden, rng),
            fuse_spanning=Linear.init(width, config.hidden, rng) if config.spanning_fusion == "linear" else None,
        )


def tab_forward(
    recent: Tensor,
    spanning_bank: list[Tensor],
    p: TABParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Temporal aggregation block over every spanning scale for one recent matrix."""
    if len(spanning_bank) != len(p.blocks):
        raise ConfigurationError(
            f"Temporal aggregation block has {len(p.blocks)} coupling blocks but got {len(spanning_bank)} scales"
        )
    outputs = [cb_forward(recent, s, block, config, training, rng) for s, block in zip(spanning_bank, p.blocks)]
    recent_out = relu(p.fuse_recent(concat([r for r, _ in outputs])))
    if p.fuse_spanning is not None:
        spanning_out = relu(p.fuse_spanning(concat([s for _, s in outputs])))
    else:
        spanning_out = max_over_axis(stack_rows([s for _, s in outputs]), axis=0)
    return recent_out, spanning_out


@dataclass
class LSTMCellParams(ParamGroup):
    input_map: Linear
    hidden_map: Linear

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> LSTMCellParams:
        return cls(
            input_map=Linear.init(input_size, 4 * hidden_size, rng),
            hidden_map=Linear.init(hidden_size, 4 * hidden_size, rng, bias=False),
        )

    @property
    def hidden_size(self) -> int:
        return self.hidden_map.in_features


def lstm_zero_state(hidden_size: int) -> tuple[Tensor, Tensor]:
    return Tensor(np.zeros(hidden_size)), Tensor(np.zeros(hidden_size))


def lstm_step(x: Tensor, state: tuple[Tensor, Tensor], p: LSTMCellParams) -> tuple[Tensor, Tensor]:
    """One step of a gated recurrent cell with input, forget and output gates."""
    h, c = state
    n = p.hidden_size
    gates = p.input_map(x) + p.hidden_map(h)
    input_gate = sigmoid(gates[0:n])
    forget_gate = sigmoid(gates[n : 2 * n])
    output_gate = sigmoid(gates[2 * n : 3 * n])
    candidate = tanh(gates[3 * n : 4 * n])
    c = forget_gate * c + input_gate * candidate
    return output_gate * tanh(c), c
