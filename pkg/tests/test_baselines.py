#!/usr/bin/env python3
"""
Tests for the transition-matrix, lookup-table and recurrent next-action baselines.
"""

import numpy as np
import pytest

from src.baselines import (
    RecurrentBaseline,
    collapse_repeats,
    lut_fit,
    lut_predict,
    next_action_accuracy,
    rnn_baseline_fit,
    rnn_baseline_predict,
    tm_fit,
    tm_predict,
)
from src.rng import make_rng


def test_collapse_repeats():
    assert collapse_repeats([0, 0, 1, 1, 1, 0, 2, 2]) == [0, 1, 0, 2]
    assert collapse_repeats([]) == []


def test_transition_matrix_rows_are_distributions():
    model = tm_fit([[0, 1, 2], [0, 1, 0], [2, 1]], n_actions=3)
    probabilities = model.probabilities()
    np.testing.assert_allclose(probabilities.sum(axis=1), np.ones(3))
    assert tm_predict(model, 0) == 1


def test_transition_matrix_unseen_predecessor_uses_prior():
    """An action never followed by anything predicts the most frequent successor overall."""
    model = tm_fit([[0, 1], [2, 1], [0, 1, 3]], n_actions=5)
    assert tm_predict(model, 4) == 1
    assert tm_predict(model, 99) == 1


def test_transition_matrix_per_activity_counts():
    sequences = [[0, 1], [0, 1], [0, 2]]
    model = tm_fit(sequences, n_actions=3, activities=[0, 0, 1])
    assert tm_predict(model, 0) == 1
    assert tm_predict(model, 0, activity=1) == 2
    assert tm_predict(model, 0, activity=7) == 1


def test_transition_matrix_needs_a_transition():
    with pytest.raises(ValueError):
        tm_fit([[1], [2, 2]])
    with pytest.raises(ValueError):
        tm_fit([[0, 1]], alpha=-1.0)


def test_lookup_table_prefers_longest_suffix():
    """Context (1, 2) predicts 4 although 2 alone mostly leads to 3."""
    sequences = [[0, 2, 3], [5, 2, 3], [6, 2, 3], [1, 2, 4]]
    table = lut_fit(sequences, n_actions=7)
    assert lut_predict(table, [0, 2]) == 3
    assert lut_predict(table, [1, 2]) == 4
    assert lut_predict(table, [9 % 7, 2]) == 3


def test_lookup_table_respects_n_max():
    sequences = [[0, 2, 3], [5, 2, 3], [6, 2, 3], [1, 2, 4]]
    table = lut_fit(sequences, n_max=1, n_actions=7)
    assert table.longest == 1
    assert lut_predict(table, [1, 2]) == 3


def test_lookup_table_backs_off_to_transition_matrix():
    table = lut_fit([[0, 1, 2]], n_actions=4)
    assert lut_predict(table, [3]) == table.fallback.predict(3)
    assert lut_predict(table, []) == int(np.argmax(table.fallback.prior))
    with pytest.raises(ValueError):
        lut_fit([[0, 1]], n_max=0)


def test_recurrent_baseline_learns_a_cycle():
    """A short cycle is learnt to perfect next-action accuracy."""
    sequences = [[0, 1, 2, 0, 1, 2, 0], [1, 2, 0, 1, 2], [2, 0, 1, 2, 0, 1]]
    model = rnn_baseline_fit(sequences, n_actions=3, rng=make_rng(0, 50), hidden_size=8, epochs=150, lr=0.05)
    accuracy = next_action_accuracy(lambda context: rnn_baseline_predict(model, context), sequences)
    assert accuracy == 100.0


def test_recurrent_baseline_loss_decreases():
    sequences = [[0, 1, 2, 3], [0, 1, 2, 3], [3, 2, 1, 0]]
    model = RecurrentBaseline(4, 6, make_rng(1, 50))
    history = model.fit(sequences, epochs=20, lr=0.02, rng=make_rng(1, 51))
    assert len(history) == 20
    assert history[-1] < history[0]


def test_recurrent_baseline_needs_context():
    model = RecurrentBaseline(3, 4, make_rng(0))
    with pytest.raises(ValueError):
        model.predict([])
    with pytest.raises(ValueError):
        model.fit([[1], [2, 2]])


def test_next_action_accuracy_counts_positions():
    """Predicting 'same as last + 1' scores every position of a counting sequence."""
    assert next_action_accuracy(lambda c: c[-1] + 1, [[0, 1, 2, 3]]) == 100.0
    assert next_action_accuracy(lambda c: 0, [[0, 1, 0, 1]]) == pytest.approx(100.0 / 3)
    with pytest.raises(ValueError):
        next_action_accuracy(lambda c: 0, [[1]])
