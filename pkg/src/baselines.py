"""
Reference next-action predictors over segment-level label sequences: a smoothed transition matrix, a
longest-suffix lookup table and a recurrent baseline.
"""

from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from src.autodiff import AdamState, Tape, adam_step, collect_grads, cross_entropy, one_hot, zero_grad
from src.blocks import Linear, LSTMCellParams, lstm_step, lstm_zero_state

logger = logging.getLogger("baselines")

DEFAULT_ALPHA = 0.1


def collapse_repeats(labels: Sequence[int]) -> list[int]:
    """Drop consecutive duplicates (frame or segment labels to segment order)."""
    collapsed: list[int] = []
    for label in labels:
        if not collapsed or collapsed[-1] != int(label):
            collapsed.append(int(label))
    return collapsed


class TransitionMatrix:
    def __init__(self, n_actions: int, alpha: float = DEFAULT_ALPHA):
        if alpha < 0:
            raise ValueError(f"Smoothing must be non-negative, got {alpha}")
        self.n_actions = n_actions
        self.alpha = alpha
        self.counts = np.zeros((n_actions, n_actions))
        self.activity_counts: dict[int, np.ndarray] = {}
        self.prior = np.zeros(n_actions)

    def _counts_for(self, activity: int | None) -> np.ndarray:
        if activity is None:
            return self.counts
        return self.activity_counts.get(activity, self.counts)

    def probabilities(self, activity: int | None = None) -> np.ndarray:
        """Row-normalised add-alpha smoothed transition probabilities."""
        smoothed = self._counts_for(activity) + self.alpha
        totals = smoothed.sum(axis=1, keepdims=True)
        uniform = np.full_like(smoothed, 1.0 / self.n_actions)
        return np.divide(smoothed, totals, out=uniform, where=totals > 0)

    def predict(self, last_action: int, activity: int | None = None) -> int:
        """Most likely next action; actions never seen as a predecessor fall back to the global prior."""
        if not 0 <= last_action < self.n_actions or self._counts_for(activity)[last_action].sum() == 0:
            return int(np.argmax(self.prior))
        return int(np.argmax(self.probabilities(activity)[last_action]))


def tm_fit(
    sequences: Sequence[Sequence[int]],
    n_actions: int | None = None,
    activities: Sequence[int | None] | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> TransitionMatrix:
    """Count action-to-action transitions, globally and per complex activity when labels are given."""
    collapsed = [collapse_repeats(seq) for seq in sequences]
    if n_actions is None:
        n_actions = 1 + max((max(seq) for seq in collapsed if seq), default=0)
    model = TransitionMatrix(n_actions, alpha)
    activities = activities if activities is not None else [None] * len(collapsed)
    for seq, activity in zip(collapsed, activities):
        per_activity = None
        if activity is not None:
            per_activity = model.activity_counts.setdefault(activity, np.zeros((n_actions, n_actions)))
        for previous, following in zip(seq, seq[1:]):
            model.counts[previous, following] += 1
            model.prior[following] += 1
            if per_activity is not None:
                per_activity[previous, following] += 1
    if model.counts.sum() == 0:
        raise ValueError("At least one transition is required to fit a transition matrix")
    return model


def tm_predict(model: TransitionMatrix, last_action: int, activity: int | None = None) -> int:
    return model.predict(last_action, activity)


class LookupTable:
    """Next-action counts for every observed context of length 1..n_max."""

    def __init__(self, n_actions: int, n_max: int | None, fallback: TransitionMatrix):
        if n_max is not None and n_max < 1:
            raise ValueError(f"n_max must be at least 1, got {n_max}")
        self.n_actions = n_actions
        self.n_max = n_max
        self.fallback = fallback
        self.tables: dict[tuple[int, ...], np.ndarray] = {}
        self.longest = 0

    def add(self, context: tuple[int, ...], following: int) -> None:
        counts = self.tables.setdefault(context, np.zeros(self.n_actions))
        counts[following] += 1
        self.longest = max(self.longest, len(context))

    def predict(self, context: Sequence[int], activity: int | None = None) -> int:
        context = collapse_repeats(context)
        if not context:
            return int(np.argmax(self.fallback.prior))
        for n in range(min(self.longest, len(context)), 0, -1):
            counts = self.tables.get(tuple(context[-n:]))
            if counts is not None:
                return int(np.argmax(counts))
        return self.fallback.predict(context[-1], activity)


def lut_fit(
    sequences: Sequence[Sequence[int]],
    n_max: int | None = None,
    n_actions: int | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> LookupTable:
    """Store every context up to `n_max` actions (unbounded when None) with its next-action counts."""
    fallback = tm_fit(sequences, n_actions=n_actions, alpha=alpha)
    table = LookupTable(fallback.n_actions, n_max, fallback)
    for seq in (collapse_repeats(s) for s in sequences):
        for position in range(1, len(seq)):
            deepest = position if n_max is None else min(n_max, position)
            for n in range(1, deepest + 1):
                table.add(tuple(seq[position - n : position]), seq[position])
    logger.debug(f"Lookup table holds {len(table.tables)} contexts (longest {table.longest})")
    return table


def lut_predict(table: LookupTable, context: Sequence[int], activity: int | None = None) -> int:
    return table.predict(context, activity)


class RecurrentBaseline:
    """Gated recurrent cell over one-hot segment labels with a linear next-action head."""

    def __init__(self, n_actions: int, hidden_size: int, rng: np.random.Generator):
        self.n_actions = n_actions
        self.cell = LSTMCellParams.init(n_actions, hidden_size, rng)
        self.head = Linear.init(hidden_size, n_actions, rng)

    def parameters(self):
        return {**self.cell.named_parameters("cell."), **self.head.named_parameters("head.")}

    def _run(self, context: Sequence[int]):
        state = lstm_zero_state(self.cell.hidden_size)
        logits = []
        for action in context:
            state = lstm_step(one_hot(action, self.n_actions), state, self.cell)
            logits.append(self.head(state[0]))
        return logits

    def predict(self, context: Sequence[int]) -> int:
        context = collapse_repeats(context)
        if not context:
            raise ValueError("The recurrent baseline needs at least one observed action")
        return int(np.argmax(self._run(context)[-1].data))

    def fit(
        self,
        sequences: Sequence[Sequence[int]],
        epochs: int = 50,
        lr: float = 1e-3,
        batch_size: int = 10,
        rng: np.random.Generator | None = None,
    ) -> list[float]:
        """Train on every prefix of every sequence; returns the mean loss per epoch."""
        collapsed = [s for s in (collapse_repeats(seq) for seq in sequences) if len(s) > 1]
        if not collapsed:
            raise ValueError("At least one sequence with a transition is required")
        params = self.parameters()
        state = AdamState(lr=lr)
        order_rng = rng or np.random.default_rng(0)
        history = []
        for epoch in range(1, epochs + 1):
            order = order_rng.permutation(len(collapsed))
            losses = []
            for batch_start in range(0, len(order), batch_size):
                batch = [collapsed[i] for i in order[batch_start : batch_start + batch_size]]
                zero_grad(params)
                with Tape() as tape:
                    total = None
                    count = 0
                    for seq in batch:
                        for logits, following in zip(self._run(seq[:-1]), seq[1:]):
                            term = cross_entropy(logits, following)
                            total = term if total is None else total + term
                            count += 1
                    loss = total * (1.0 / count)
                    tape.backward(loss)
                adam_step(params, collect_grads(params), state)
                losses.append(loss.item())
            history.append(float(np.mean(losses)))
            logger.debug(f"Recurrent baseline epoch {epoch}: loss {history[-1]:.4f}")
        return history


def rnn_baseline_fit(
    sequences: Sequence[Sequence[int]],
    n_actions: int,
    rng: np.random.Generator,
    hidden_size: int = 512,
    epochs: int = 50,
    lr: float = 1e-3,
) -> RecurrentBaseline:
    model = RecurrentBaseline(n_actions, hidden_size, rng)
    model.fit(sequences, epochs=epochs, lr=lr, rng=rng)
    return model


def rnn_baseline_predict(model: RecurrentBaseline, context: Sequence[int]) -> int:
    return model.predict(context)


def next_action_accuracy(
    predict: Callable[[list[int]], int], sequences: Sequence[Sequence[int]], min_context: int = 1
) -> float:
    """Percent of positions whose action is predicted from the preceding segment labels."""
    hits = total = 0
    for seq in (collapse_repeats(s) for s in sequences):
        for position in range(min_context, len(seq)):
            hits += int(predict(seq[:position]) == seq[position])
            total += 1
    if total == 0:
        raise ValueError("No predictable positions in the given sequences")
    return 100.0 * hits / total
