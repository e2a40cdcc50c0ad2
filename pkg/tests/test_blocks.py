#!/usr/bin/env python3
"""
Tests for the attention, coupling and aggregation blocks against straight-line numpy oracles.
"""

import math

import numpy as np
import pytest

from src.autodiff import Tape, Tensor, concat, cross_entropy, tensor_sum
from src.autodiff.gradcheck import check_gradients
from src.blocks import (
    CBParams,
    LSTMCellParams,
    NLBParams,
    TABParams,
    cb_forward,
    lstm_step,
    lstm_zero_state,
    nlb_forward,
    tab_forward,
)
from src.errors import ConfigurationError, DimensionError
from src.models import Coupling
from src.rng import make_rng
from tests.fixture_corpus import get_small_model_config

ORACLE_TOLERANCE = 1e-10


def _layer_norm_row(x, gain, bias):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return np.array([(v - mu) / math.sqrt(var + 1e-5) * g + b for v, g, b in zip(x, gain, bias)])


def _oracle_nlb(context, query, p):
    """Loop-by-loop non-local block."""
    d, kq = query.shape
    kc = context.shape[1]
    q_rows = [_layer_norm_row(query[:, a], p.ln_in.gain.data, p.ln_in.bias.data) for a in range(kq)]
    c_rows = [_layer_norm_row(context[:, b], p.ln_in.gain.data, p.ln_in.bias.data) for b in range(kc)]
    theta, phi, g, out = p.theta.weight.data, p.phi.weight.data, p.g.weight.data, p.out.weight.data
    result = np.zeros((d, kq))
    for a in range(kq):
        scores = []
        for b in range(kc):
            qa = [sum(q_rows[a][i] * theta[i, e] for i in range(d)) for e in range(p.attn_dim)]
            cb = [sum(c_rows[b][i] * phi[i, e] for i in range(d)) for e in range(p.attn_dim)]
            scores.append(sum(x * y for x, y in zip(qa, cb)) / math.sqrt(p.attn_dim))
        top = max(scores)
        weights = [math.exp(s - top) for s in scores]
        weights = [w / sum(weights) for w in weights]
        mixed = np.zeros(p.attn_dim)
        for b in range(kc):
            gb = np.array([sum(c_rows[b][i] * g[i, e] for i in range(d)) for e in range(p.attn_dim)])
            mixed += weights[b] * gb
        update = np.array([sum(mixed[e] * out[e, i] for e in range(p.attn_dim)) for i in range(d)])
        result[:, a] = _layer_norm_row(query[:, a] + update, p.ln_out.gain.data, p.ln_out.bias.data)
    return result


def _oracle_linear_relu(x, layer):
    y = x @ layer.weight.data + layer.bias.data
    return np.maximum(y, 0.0)


def _oracle_cb(recent, spanning, p):
    spanning_att = _oracle_nlb(spanning, spanning, p.nlb_self)
    recent_att = _oracle_nlb(spanning_att, recent, p.nlb_cross)
    recent_vec = recent_att.max(axis=1)
    recent_out = _oracle_linear_relu(np.concatenate([recent_vec, recent.max(axis=1)]), p.fuse_recent)
    spanning_out = _oracle_linear_relu(np.concatenate([recent_vec, spanning_att.max(axis=1)]), p.fuse_spanning)
    return recent_out, spanning_out


def _randomise_norms(p, rng):
    for ln in (p.ln_in, p.ln_out):
        ln.gain.data = rng.uniform(0.5, 1.5, size=ln.gain.shape)
        ln.bias.data = rng.normal(0.0, 0.1, size=ln.bias.shape)


@pytest.mark.parametrize("seed", range(5))
def test_nlb_matches_loop_oracle(seed):
    rng = make_rng(seed, 20)
    p = NLBParams.init(4, 3, 0.0, rng)
    _randomise_norms(p, rng)
    context = rng.standard_normal((4, 5))
    query = rng.standard_normal((4, 3))
    out = nlb_forward(Tensor(context), Tensor(query), p).data
    assert out.shape == (4, 3)
    np.testing.assert_allclose(out, _oracle_nlb(context, query, p), atol=ORACLE_TOLERANCE, rtol=0)


def test_nlb_singleton_context_gives_uniform_weights():
    """A single context column receives all attention exactly."""
    rng = make_rng(1, 21)
    p = NLBParams.init(4, 2, 0.0, rng)
    _, attention = nlb_forward(
        Tensor(rng.standard_normal((4, 1))), Tensor(rng.standard_normal((4, 3))), p, return_attention=True
    )
    assert np.array_equal(attention.data, np.ones((3, 1)))


def test_nlb_rejects_wrong_feature_dimension():
    p = NLBParams.init(4, 2, 0.0, make_rng(0))
    with pytest.raises(DimensionError):
        nlb_forward(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 2))), p)


@pytest.mark.parametrize("seed", range(3))
def test_cb_matches_loop_oracle(seed):
    rng = make_rng(seed, 22)
    config = get_small_model_config()
    p = CBParams.init(4, config, rng)
    recent = rng.standard_normal((4, 2))
    spanning = rng.standard_normal((4, 3))
    recent_out, spanning_out = cb_forward(Tensor(recent), Tensor(spanning), p, config)
    expected_recent, expected_spanning = _oracle_cb(recent, spanning, p)
    np.testing.assert_allclose(recent_out.data, expected_recent, atol=ORACLE_TOLERANCE, rtol=0)
    np.testing.assert_allclose(spanning_out.data, expected_spanning, atol=ORACLE_TOLERANCE, rtol=0)


def test_cb_without_attention_uses_raw_inputs():
    """With attention off the coupling block sees the pooled inputs directly."""
    rng = make_rng(3, 23)
    config = get_small_model_config(use_nlb=False)
    p = CBParams.init(4, config, rng)
    recent = rng.standard_normal((4, 2))
    spanning = rng.standard_normal((4, 3))
    recent_out, spanning_out = cb_forward(Tensor(recent), Tensor(spanning), p, config)
    pooled_recent = recent.max(axis=1)
    np.testing.assert_allclose(
        recent_out.data, _oracle_linear_relu(np.concatenate([pooled_recent, pooled_recent]), p.fuse_recent)
    )
    np.testing.assert_allclose(
        spanning_out.data,
        _oracle_linear_relu(np.concatenate([pooled_recent, spanning.max(axis=1)]), p.fuse_spanning),
    )


@pytest.mark.parametrize("coupling", list(Coupling))
def test_cb_variants_produce_hidden_vectors(coupling):
    rng = make_rng(4, 24)
    config = get_small_model_config(coupling=coupling)
    p = CBParams.init(4, config, rng)
    recent_out, spanning_out = cb_forward(
        Tensor(rng.standard_normal((4, 2))), Tensor(rng.standard_normal((4, 3))), p, config
    )
    assert recent_out.shape == (config.hidden,)
    assert spanning_out.shape == (config.hidden,)


@pytest.mark.parametrize("seed", range(3))
def test_tab_matches_loop_oracle(seed):
    """Recent outputs are fused by a linear layer, spanning outputs by an element-wise max."""
    rng = make_rng(seed, 25)
    config = get_small_model_config()
    p = TABParams.init(4, 2, config, rng)
    recent = rng.standard_normal((4, 2))
    spanning = [rng.standard_normal((4, 2)), rng.standard_normal((4, 3))]
    recent_out, spanning_out = tab_forward(Tensor(recent), [Tensor(s) for s in spanning], p, config)
    per_scale = [_oracle_cb(recent, s, block) for s, block in zip(spanning, p.blocks)]
    expected_recent = _oracle_linear_relu(np.concatenate([r for r, _ in per_scale]), p.fuse_recent)
    expected_spanning = np.maximum(per_scale[0][1], per_scale[1][1])
    np.testing.assert_allclose(recent_out.data, expected_recent, atol=ORACLE_TOLERANCE, rtol=0)
    np.testing.assert_allclose(spanning_out.data, expected_spanning, atol=ORACLE_TOLERANCE, rtol=0)


def test_tab_linear_spanning_fusion():
    rng = make_rng(0, 26)
    config = get_small_model_config(spanning_fusion="linear")
    p = TABParams.init(4, 2, config, rng)
    assert p.fuse_spanning is not None
    _, spanning_out = tab_forward(
        Tensor(rng.standard_normal((4, 2))), [Tensor(rng.standard_normal((4, 2)))] * 2, p, config
    )
    assert spanning_out.shape == (config.hidden,)


def test_tab_rejects_scale_count_mismatch():
    rng = make_rng(0, 27)
    config = get_small_model_config()
    p = TABParams.init(4, 2, config, rng)
    with pytest.raises(ConfigurationError):
        tab_forward(Tensor(np.ones((4, 2))), [Tensor(np.ones((4, 2)))], p, config)


def test_dropout_only_acts_in_training():
    """Evaluation is deterministic; training with a positive rate perturbs the output."""
    rng = make_rng(0, 28)
    p = NLBParams.init(4, 2, 0.5, rng)
    context, query = Tensor(rng.standard_normal((4, 5))), Tensor(rng.standard_normal((4, 3)))
    first = nlb_forward(context, query, p).data
    np.testing.assert_array_equal(first, nlb_forward(context, query, p).data)
    trained = nlb_forward(context, query, p, training=True, rng=make_rng(1)).data
    assert not np.allclose(first, trained)


@pytest.mark.parametrize("seed", range(20))
def test_tab_passes_gradient_check(seed):
    rng = make_rng(seed, 29)
    config = get_small_model_config()
    p = TABParams.init(4, 2, config, rng)
    _randomise_norms(p.blocks[0].nlb_self, rng)
    recent = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    spanning = [Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal((4, 2)))]
    weights = rng.standard_normal(config.hidden)

    def loss_fn():
        r, s = tab_forward(recent, spanning, p, config)
        return tensor_sum(r * weights) + tensor_sum(s * s)

    params = {**p.named_parameters(), "recent": recent}
    errors = check_gradients(loss_fn, params, max_entries=4, rng=make_rng(seed, 30))
    assert max(errors.values()) < 1e-4, errors


@pytest.mark.parametrize("seed", range(20))
def test_lstm_step_passes_gradient_check(seed):
    rng = make_rng(seed, 31)
    p = LSTMCellParams.init(3, 4, rng)
    inputs = [Tensor(rng.standard_normal(3)) for _ in range(3)]

    def loss_fn():
        state = lstm_zero_state(4)
        for x in inputs:
            state = lstm_step(x, state, p)
        return tensor_sum(state[0] * state[1])

    errors = check_gradients(loss_fn, p.named_parameters())
    assert max(errors.values()) < 1e-4, errors


def test_lstm_state_shapes_and_bounds():
    """The hidden state is a gated tanh, so it stays inside (-1, 1)."""
    rng = make_rng(0, 32)
    p = LSTMCellParams.init(3, 5, rng)
    with Tape():
        h, c = lstm_step(Tensor(rng.standard_normal(3) * 10), lstm_zero_state(5), p)
    assert h.shape == c.shape == (5,)
    assert np.all(np.abs(h.data) < 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_every_block_parameter_receives_gradient(seed):
    """A cross-entropy on the aggregates reaches every attention, coupling and fusion tensor."""
    rng = make_rng(seed, 33)
    config = get_small_model_config(hidden=16, attn_dim=4)
    p = TABParams.init(6, 2, config, rng)
    recent = Tensor(rng.standard_normal((6, 3)))
    spanning = [Tensor(rng.standard_normal((6, 4))), Tensor(rng.standard_normal((6, 5)))]
    head = Tensor(rng.standard_normal((2 * config.hidden, 4)))
    with Tape() as tape:
        r, s = tab_forward(recent, spanning, p, config)
        tape.backward(cross_entropy(concat([r, s]) @ head, int(rng.integers(4))))
    for name, param in p.named_parameters().items():
        assert param.grad is not None and np.any(param.grad != 0.0), name
