#!/usr/bin/env python3
"""
Tests for the tensor tape, the differentiable operations and the Adam optimizer.
"""

import math

import numpy as np
import pytest

from src.autodiff import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    collect_grads,
    concat,
    cross_entropy,
    dropout,
    layer_norm,
    learning_rate_at,
    max_over_axis,
    mean,
    normalize,
    relu,
    sigmoid,
    softmax,
    stack_rows,
    tanh,
    tensor_sum,
)
from src.autodiff.gradcheck import check_gradients
from src.errors import DimensionError
from src.rng import make_rng

TOLERANCE = 1e-4


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def test_add_and_mul_accumulate_into_leaves():
    """d(x*y + x)/dx = y + 1 and d/dy = x."""
    x = Tensor([2.0, -1.0], requires_grad=True)
    y = Tensor([3.0, 4.0], requires_grad=True)
    with Tape() as tape:
        loss = tensor_sum(x * y + x)
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [4.0, 5.0])
    np.testing.assert_array_equal(y.grad, [2.0, -1.0])


def test_broadcast_gradient_is_summed_back():
    """A bias row added to every row of a matrix receives the column sums."""
    bias = Tensor(np.zeros(3), requires_grad=True)
    x = Tensor(np.ones((4, 3)))
    with Tape() as tape:
        tape.backward(tensor_sum(x + bias))
    np.testing.assert_array_equal(bias.grad, [4.0, 4.0, 4.0])


def test_no_recording_without_tape_or_grad():
    """Operations outside a tape, or on constants, are not recorded."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x * 2.0
    assert y.tape is None
    with Tape() as tape:
        z = Tensor([1.0]) * 3.0
    assert z.tape is None
    assert tape.nodes == []


def test_backward_twice_raises():
    """A tape is consumed by its first backward pass."""
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        loss = tensor_sum(x * x)
        tape.backward(loss)
        with pytest.raises(RuntimeError):
            tape.backward(loss)


def test_non_scalar_loss_is_rejected():
    """Only size-1 losses can be differentiated."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        with pytest.raises(ValueError):
            tape.backward(x * 2.0)


def test_mixing_tapes_raises():
    """A value recorded on one tape cannot feed an operation on another."""
    x = Tensor([1.0], requires_grad=True)
    with Tape():
        y = x * 2.0
    with Tape():
        with pytest.raises(RuntimeError):
            _ = y + 1.0


def test_module_backward_uses_the_recording_tape():
    """`backward(loss)` finds the tape the loss was recorded on."""
    x = Tensor([3.0], requires_grad=True)
    with Tape():
        loss = tensor_sum(x * x)
        backward(loss)
    np.testing.assert_allclose(x.grad, [6.0])
    with pytest.raises(ValueError):
        backward(Tensor(1.0))


def test_matmul_shape_mismatch_names_both_shapes():
    """Misaligned operands raise a dimension error mentioning both shapes."""
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 5)))
    with pytest.raises(DimensionError, match=r"\(2, 3\) vs \(4, 5\)"):
        _ = a @ b


def test_rank_above_three_is_rejected():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((1, 1, 1, 1)))


def test_softmax_rows_sum_to_one():
    """Softmax rows are probability vectors, even for large logits."""
    rng = make_rng(1)
    x = Tensor(rng.standard_normal((5, 7)) * 50.0)
    y = softmax(x, axis=-1)
    np.testing.assert_allclose(y.data.sum(axis=1), np.ones(5), atol=1e-12)
    assert np.all(y.data >= 0)


def test_normalize_rows_are_centred_and_scaled():
    """Pre-affine layer-norm rows have zero mean and unit variance (up to the epsilon)."""
    rng = make_rng(2)
    x = Tensor(rng.standard_normal((6, 16)) * 100.0 + 5.0)
    y = normalize(x).data
    assert np.all(np.abs(y.mean(axis=1)) < 1e-8)
    np.testing.assert_allclose(y.var(axis=1), np.ones(6), atol=1e-6)


def test_layer_norm_matches_direct_formula():
    rng = make_rng(3)
    x = rng.standard_normal((3, 5))
    gain = rng.standard_normal(5)
    bias = rng.standard_normal(5)
    expected = (x - x.mean(axis=1, keepdims=True)) / np.sqrt(x.var(axis=1, keepdims=True) + 1e-5) * gain + bias
    out = layer_norm(Tensor(x), Tensor(gain), Tensor(bias)).data
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_concat_validates_inputs():
    """Empty input is an argument error, off-axis mismatch a dimension error."""
    with pytest.raises(ValueError):
        concat([])
    with pytest.raises(DimensionError):
        concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)
    out = concat([Tensor(np.ones((2, 3))), Tensor(np.zeros((1, 3)))], axis=0)
    assert out.shape == (3, 3)


def test_max_gradient_goes_to_first_argmax():
    """Ties send the whole subgradient to the first maximal element."""
    x = Tensor(np.array([[1.0, 3.0, 3.0], [2.0, 0.0, 2.0]]), requires_grad=True)
    with Tape() as tape:
        tape.backward(tensor_sum(max_over_axis(x, axis=1)))
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def test_dropout_modes():
    """Identity outside training, inverted scaling inside it, range-checked rate."""
    x = Tensor(np.ones((20, 20)), requires_grad=True)
    assert dropout(x, 0.5, training=False, rng=None) is x
    assert dropout(x, 0.0, training=True, rng=None) is x
    with pytest.raises(ValueError):
        dropout(x, 1.0, training=True, rng=make_rng(0))
    y = dropout(x, 0.5, training=True, rng=make_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert 0 < (y == 0).sum() < y.size


def test_dropout_keeps_the_expected_share_and_mean():
    """At rate 0.5 about half the entries survive and inverted scaling preserves the mean."""
    x = Tensor(make_rng(2).uniform(1.0, 2.0, size=100_000))
    y = dropout(x, 0.5, training=True, rng=make_rng(3)).data
    assert abs(np.mean(y != 0.0) - 0.5) <= 0.01
    assert abs(y.mean() / x.data.mean() - 1.0) <= 0.02


def test_cross_entropy_value_and_target_check():
    """Uniform logits over N classes cost ln N; out-of-range targets are rejected."""
    loss = cross_entropy(Tensor(np.zeros(4)), 2)
    assert math.isclose(loss.item(), math.log(4.0), rel_tol=1e-12)
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros(4)), 4)


@pytest.mark.parametrize("seed", range(20))
def test_elementwise_ops_pass_gradient_check(seed):
    """relu, sigmoid, tanh, softmax, normalize and division against central differences."""
    rng = make_rng(seed, 10)
    x = _param(rng, 3, 4)
    w = _param(rng, 4, 5)
    g = _param(rng, 5)
    d = Tensor(rng.uniform(1.0, 2.0, size=5), requires_grad=True)
    target = int(rng.integers(5))

    def loss_fn():
        h = layer_norm(relu(x @ w) + tanh(x @ w), g)
        p = softmax(sigmoid(h) / d, axis=-1)
        return tensor_sum(p * p) + cross_entropy(mean(h, axis=0), target)

    errors = check_gradients(loss_fn, {"x": x, "w": w, "g": g, "d": d})
    assert max(errors.values()) < TOLERANCE, errors


@pytest.mark.parametrize("seed", range(20))
def test_structural_ops_pass_gradient_check(seed):
    """concat, stack_rows, max, slicing, transpose and vector-matrix products."""
    rng = make_rng(seed, 11)
    a = _param(rng, 4, 3)
    b = _param(rng, 4, 2)
    v = _param(rng, 5)
    w = _param(rng, 5, 4)

    def loss_fn():
        joined = concat([a, b], axis=1)
        rows = stack_rows([max_over_axis(joined, axis=1), (v @ w)[0:4]])
        return tensor_sum(tanh(rows.T @ rows))

    errors = check_gradients(loss_fn, {"a": a, "b": b, "v": v, "w": w})
    assert max(errors.values()) < TOLERANCE, errors


def test_adam_first_step_moves_by_learning_rate():
    """After bias correction the first update has magnitude lr in every coordinate."""
    p = Tensor(np.array([1.0, -1.0, 0.5]), requires_grad=True)
    state = AdamState(lr=0.1)
    adam_step({"p": p}, {"p": np.array([0.3, -2.0, 5.0])}, state)
    np.testing.assert_allclose(p.data, [0.9, -0.9, 0.4], atol=1e-6)
    assert state.step == 1


def test_repeated_backward_gives_identical_gradients():
    """Recording the same computation twice yields bitwise-equal gradients."""
    rng = make_rng(6, 12)
    x = _param(rng, 3, 4)
    w = _param(rng, 4, 5)
    g = _param(rng, 5)
    target = int(rng.integers(5))

    def gradients():
        for p in (x, w, g):
            p.zero_grad()
        with Tape() as tape:
            h = layer_norm(relu(x @ w), g)
            attention = softmax(h @ h.T, axis=-1)
            pooled = max_over_axis(attention @ h, axis=0)
            loss = cross_entropy(pooled, target) + tensor_sum(dropout(h, 0.3, True, make_rng(1)))
            tape.backward(loss)
        return [p.grad.copy() for p in (x, w, g)]

    for first, second in zip(gradients(), gradients()):
        assert np.array_equal(first, second)


def test_adam_converges_on_a_quadratic():
    """200 steps at lr 0.05 bring w within 1e-3 of the minimiser of ||w - w*||^2."""
    target = np.array([0.5, -1.0, 0.25, 0.8, -0.3])
    w = Tensor(np.zeros(5), requires_grad=True)
    state = AdamState(lr=0.05)
    for _ in range(200):
        w.zero_grad()
        with Tape() as tape:
            diff = w - Tensor(target)
            tape.backward(tensor_sum(diff * diff))
        adam_step({"w": w}, collect_grads({"w": w}), state)
    assert np.max(np.abs(w.data - target)) < 1e-3


def test_adam_zero_learning_rate_leaves_parameters_bitwise_unchanged():
    rng = make_rng(5)
    p = _param(rng, 3, 3)
    before = p.data.copy()
    state = AdamState(lr=0.0)
    for _ in range(3):
        adam_step({"p": p}, {"p": rng.standard_normal((3, 3))}, state)
    assert np.array_equal(p.data, before)


def test_adam_treats_missing_gradient_as_zero_and_checks_shapes():
    p = Tensor(np.ones(2), requires_grad=True)
    state = AdamState(lr=0.1)
    adam_step({"p": p}, collect_grads({"p": p}), state)
    np.testing.assert_array_equal(p.data, np.ones(2))
    with pytest.raises(DimensionError):
        adam_step({"p": p}, {"p": np.ones(3)}, state)


def test_learning_rate_schedule_steps_by_factor_ten():
    """1e-4 for epochs 1-10, 1e-5 for 11-20, 1e-6 for 21-25."""
    rates = [learning_rate_at(epoch, 1e-4) for epoch in range(1, 26)]
    assert all(math.isclose(r, 1e-4) for r in rates[:10])
    assert all(math.isclose(r, 1e-5) for r in rates[10:20])
    assert all(math.isclose(r, 1e-6) for r in rates[20:])
    with pytest.raises(ValueError):
        learning_rate_at(0, 1e-4)
