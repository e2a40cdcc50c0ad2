"""
Grammar-driven procedural-activity corpora.

An `ActivityGrammar` is an ordered list of steps; each step picks one action from its choices, may be
skipped or repeated, and may copy the choice index of an earlier step (a long-range dependency). Frame
features are emitted around per-action prototype vectors with gaussian noise; optionally only brief spikes
carry the prototype over a background shared by all actions and shifted per segment.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.errors import GrammarError
from src.models import FrameSequence
from src.rng import make_rng

logger = logging.getLogger("synth_data")

EMITTER_STREAM = 0
SEQUENCE_STREAM = 1


@dataclass(frozen=True)
class ActionStep:
    choices: tuple[int, ...]
    optional: float = 0.0
    repeat: tuple[int, int] = (1, 1)
    tied_to: int | None = None


@dataclass(frozen=True)
class DurationLaw:
    mean_seconds: float
    jitter: float = 0.0

    def sample(self, fps: float, rng: np.random.Generator) -> int:
        seconds = self.mean_seconds * (1.0 + self.jitter * rng.uniform(-1.0, 1.0))
        return max(1, int(round(seconds * fps)))


@dataclass
class ActivityGrammar:
    activity: int
    steps: list[ActionStep]
    durations: dict[int, DurationLaw] = field(default_factory=dict)
    default_duration: DurationLaw | None = None

    @property
    def markov_order(self) -> int:
        """How many previous steps a choice can depend on."""
        return max([1, *(i - step.tied_to for i, step in enumerate(self.steps) if step.tied_to is not None)])

    @property
    def actions(self) -> set[int]:
        return {a for step in self.steps for a in step.choices}

    def validate(self) -> None:
        if not self.steps:
            raise GrammarError("grammar has no steps", f"activity {self.activity}")
        if all(step.optional > 0 for step in self.steps):
            raise GrammarError("every step is optional, so empty sequences are derivable", f"activity {self.activity}")
        for index, step in enumerate(self.steps):
            rule = f"activity {self.activity} step {index}"
            if not step.choices or min(step.choices) < 0:
                raise GrammarError("step needs at least one non-negative action choice", rule)
            if not 0.0 <= step.optional < 1.0:
                raise GrammarError(f"skip probability {step.optional} outside [0, 1)", rule)
            low, high = step.repeat
            if low < 1 or high < low:
                raise GrammarError(f"invalid repeat range {step.repeat}", rule)
            if step.tied_to is not None:
                if not 0 <= step.tied_to < index:
                    raise GrammarError(f"tie to step {step.tied_to} must point to an earlier step", rule)
                source = self.steps[step.tied_to]
                if source.optional > 0 or source.repeat != (1, 1):
                    raise GrammarError(f"tied step {step.tied_to} must occur exactly once", rule)
                if len(source.choices) != len(step.choices):
                    raise GrammarError(f"choice count differs from tied step {step.tied_to}", rule)
            for action in step.choices:
                law = self.durations.get(action, self.default_duration)
                if law is None:
                    raise GrammarError(f"no duration law for action {action}", rule)
                if law.mean_seconds <= 0 or not 0.0 <= law.jitter < 1.0:
                    raise GrammarError(f"invalid duration law for action {action}", rule)

    def duration_of(self, action: int) -> DurationLaw:
        return self.durations.get(action, self.default_duration)


def sample_actions(grammar: ActivityGrammar, rng: np.random.Generator) -> list[int]:
    """Derive one segment-level action list (before merging equal neighbours)."""
    picked: dict[int, int] = {}
    actions: list[int] = []
    for index, step in enumerate(grammar.steps):
        if step.optional > 0 and rng.random() < step.optional:
            continue
        low, high = step.repeat
        for _ in range(int(rng.integers(low, high + 1))):
            if step.tied_to is not None:
                choice = picked[step.tied_to]
            else:
                choice = int(rng.integers(len(step.choices)))
            picked[index] = choice
            actions.append(step.choices[choice])
    return actions


@dataclass
class FeatureEmitter:
    prototypes: np.ndarray
    sigma: float = 0.0
    distractors: int = 0
    # Share of frames showing the action prototype; the rest show the background shared by all actions.
    spike_rate: float = 1.0
    # Std of an offset drawn once per segment and added to all of its frames.
    drift: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.spike_rate <= 1.0:
            raise ValueError(f"spike_rate must lie in (0, 1], got {self.spike_rate}")
        if self.sigma < 0 or self.drift < 0:
            raise ValueError("Noise levels must be non-negative")

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1] + self.distractors

    @property
    def n_actions(self) -> int:
        return self.prototypes.shape[0]

    @property
    def background(self) -> np.ndarray:
        return self.prototypes.mean(axis=0)


def make_emitter(
    n_actions: int,
    dim: int,
    rng: np.random.Generator,
    separation: float = 4.0,
    sigma: float = 0.5,
    distractors: int = 0,
    spike_rate: float = 1.0,
    drift: float = 0.0,
) -> FeatureEmitter:
    """Prototypes of norm `separation`; mutually orthogonal whenever `dim` allows."""
    if dim < 1 or n_actions < 1:
        raise ValueError("Emitter needs at least one action and one dimension")
    raw = rng.standard_normal((dim, n_actions))
    if dim >= n_actions:
        basis, _ = np.linalg.qr(raw)
        prototypes = basis.T
    else:
        prototypes = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
    return FeatureEmitter(
        prototypes=prototypes * separation, sigma=sigma, distractors=distractors, spike_rate=spike_rate, drift=drift
    )


def emit_features(labels: np.ndarray, emitter: FeatureEmitter, rng: np.random.Generator) -> np.ndarray:
    """f_t = prototype(label_t) + N(0, sigma²), plus pure-noise distractor columns.

    Below a spike rate of 1, frames that miss the draw show the shared background instead of their
    prototype; with drift, every segment is shifted by its own gaussian offset.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= emitter.n_actions):
        missing = sorted({int(v) for v in labels if not 0 <= v < emitter.n_actions})
        raise ValueError(f"No prototype for actions {missing}")
    features = emitter.prototypes[labels]
    if emitter.spike_rate < 1.0:
        spikes = rng.random(labels.size) < emitter.spike_rate
        features = np.where(spikes[:, None], features, emitter.background[None, :])
    if emitter.drift > 0 and labels.size:
        run_ids = np.concatenate([[0], np.cumsum(labels[1:] != labels[:-1])])
        offsets = rng.normal(0.0, emitter.drift, size=(run_ids[-1] + 1, features.shape[1]))
        features = features + offsets[run_ids]
    if emitter.distractors:
        features = np.concatenate([features, np.zeros((labels.size, emitter.distractors))], axis=1)
    if emitter.sigma > 0:
        features = features + rng.normal(0.0, emitter.sigma, size=features.shape)
    return features


def generate_sequence(
    grammar: ActivityGrammar,
    emitter: FeatureEmitter,
    rng: np.random.Generator,
    fps: float = 5.0,
    name: str = "sequence",
) -> FrameSequence:
    actions = sample_actions(grammar, rng)
    labels = np.concatenate(
        [np.full(grammar.duration_of(action).sample(fps, rng), action, dtype=np.int64) for action in actions]
    )
    return FrameSequence(
        name=name,
        features=emit_features(labels, emitter, rng),
        frame_labels=labels,
        activity=grammar.activity,
        fps=fps,
    )


def generate_corpus(
    grammars: Sequence[ActivityGrammar],
    n_sequences: int,
    seed: int,
    emitter: FeatureEmitter | None = None,
    fps: float = 5.0,
    dim: int = 32,
    sigma: float = 0.5,
    separation: float = 4.0,
    distractors: int = 0,
    spike_rate: float = 1.0,
    drift: float = 0.0,
) -> list[FrameSequence]:
    """Sequence i follows grammar i mod len(grammars), drawn from its own stream of `seed`."""
    if n_sequences < 1:
        raise ValueError(f"n_sequences must be at least 1, got {n_sequences}")
    if not grammars:
        raise ValueError("At least one grammar is required")
    for grammar in grammars:
        grammar.validate()
    if emitter is None:
        n_actions = 1 + max(max(g.actions) for g in grammars)
        emitter = make_emitter(
            n_actions,
            dim,
            make_rng(seed, EMITTER_STREAM),
            separation=separation,
            sigma=sigma,
            distractors=distractors,
            spike_rate=spike_rate,
            drift=drift,
        )
    corpus = [
        generate_sequence(
            grammars[i % len(grammars)], emitter, make_rng(seed, SEQUENCE_STREAM, i), fps=fps, name=f"seq_{i:04d}"
        )
        for i in range(n_sequences)
    ]
    logger.info(f"Generated {len(corpus)} sequences from {len(grammars)} grammars (seed {seed})")
    return corpus


def conditional_entropy(sequences: Sequence[Sequence[int]], order: int) -> float:
    """Empirical H(next | previous `order` segment labels) in bits."""
    if order < 1:
        raise ValueError(f"order must be at least 1, got {order}")
    joint: dict[tuple[int, ...], Counter] = defaultdict(Counter)
    for seq in sequences:
        for position in range(order, len(seq)):
            joint[tuple(seq[position - order : position])][seq[position]] += 1
    total = sum(sum(c.values()) for c in joint.values())
    if total == 0:
        raise ValueError(f"No context of length {order} in the given sequences")
    entropy = 0.0
    for counts in joint.values():
        context_total = sum(counts.values())
        for count in counts.values():
            entropy -= (count / total) * math.log2(count / context_total)
    return entropy


def chain_grammar(
    actions: Sequence[int] = (0, 1, 2), seconds: float = 8.0, activity: int = 0, jitter: float = 0.0
) -> ActivityGrammar:
    """Deterministic chain: every sequence runs through `actions` in order."""
    return ActivityGrammar(
        activity=activity,
        steps=[ActionStep((a,)) for a in actions],
        default_duration=DurationLaw(seconds, jitter),
    )


def markov_grammar(
    n_actions: int = 5, seconds: float = 10.0, activity: int = 0, jitter: float = 0.2
) -> ActivityGrammar:
    """Next action depends on the current one only."""
    return chain_grammar(tuple(range(n_actions)), seconds=seconds, activity=activity, jitter=jitter)


def long_range_grammar(
    n_signatures: int = 2,
    n_fillers: int = 3,
    signature_seconds: float = 6.0,
    filler_seconds: float = 10.0,
    activity: int = 0,
    jitter: float = 0.1,
) -> ActivityGrammar:
    """The final action is decided by the first one, with `n_fillers` shared actions in between."""
    signatures = tuple(range(n_signatures))
    fillers = tuple(range(n_signatures, n_signatures + n_fillers))
    endings = tuple(range(n_signatures + n_fillers, 2 * n_signatures + n_fillers))
    durations = {a: DurationLaw(signature_seconds, jitter) for a in signatures + endings}
    durations.update({a: DurationLaw(filler_seconds, jitter) for a in fillers})
    return ActivityGrammar(
        activity=activity,
        steps=[
            ActionStep(signatures),
            *(ActionStep((f,)) for f in fillers),
            ActionStep(endings, tied_to=0),
        ],
        durations=durations,
    )


def order_grammar(order: int = 3, seconds: float = 5.0, activity: int = 0, jitter: float = 0.1) -> ActivityGrammar:
    """Two branches that share `order - 1` middle actions, so the ending needs `order` actions of context."""
    if order < 2:
        raise ValueError(f"order must be at least 2, got {order}")
    middle = tuple(range(2, 2 + order - 1))
    last = 2 + order - 1
    return ActivityGrammar(
        activity=activity,
        steps=[ActionStep((0, 1)), *(ActionStep((m,)) for m in middle), ActionStep((last, last + 1), tied_to=0)],
        default_duration=DurationLaw(seconds, jitter),
    )


def sparse_order_grammar(
    order: int = 3,
    n_fillers: int = 3,
    skip: float = 0.5,
    seconds: float = 4.0,
    activity: int = 0,
    jitter: float = 0.1,
) -> ActivityGrammar:
    """An order-`order` core behind a lead choice and skippable fillers, closed by an action tied to the lead.

    The core ending is decided by the `order` actions before it. The closing action is decided by the lead,
    so its full context varies with the fillers that were skipped and is rarely seen twice.
    """
    if order < 2:
        raise ValueError(f"order must be at least 2, got {order}")
    if n_fillers < 1:
        raise ValueError(f"n_fillers must be at least 1, got {n_fillers}")
    fillers = range(2, 2 + n_fillers)
    choice = 2 + n_fillers
    middle = range(choice + 2, choice + 2 + order - 1)
    ending = choice + 2 + order - 1
    closing = ending + 2
    core_index = 1 + n_fillers
    return ActivityGrammar(
        activity=activity,
        steps=[
            ActionStep((0, 1)),
            *(ActionStep((f,), optional=skip) for f in fillers),
            ActionStep((choice, choice + 1)),
            *(ActionStep((m,)) for m in middle),
            ActionStep((ending, ending + 1), tied_to=core_index),
            ActionStep((closing, closing + 1), tied_to=0),
        ],
        default_duration=DurationLaw(seconds, jitter),
    )


def desk_grammars(
    n_activities: int = 3, n_actions: int = 12, mean_seconds: float = 35.0, jitter: float = 0.3
) -> list[ActivityGrammar]:
    """Default desk-scale activities: each owns n_actions / n_activities actions with one tied swap."""
    per_activity = n_actions // n_activities
    if per_activity < 4:
        raise ValueError(f"Need at least 4 actions per activity, got {per_activity}")
    grammars = []
    for z in range(n_activities):
        own = [z * per_activity + k for k in range(per_activity)]
        durations = {a: DurationLaw(mean_seconds * (0.75 + 0.25 * (a % 3)), jitter) for a in own}
        steps = [
            ActionStep((own[0],)),
            ActionStep((own[1], own[2])),
            ActionStep((own[3],)),
            ActionStep((own[2], own[1]), tied_to=1),
            *(ActionStep((a,), optional=0.3) for a in own[4:]),
        ]
        grammars.append(ActivityGrammar(activity=z, steps=steps, durations=durations))
    return grammars


def desk_corpus(
    seed: int, n_sequences: int = 60, dim: int = 32, fps: float = 5.0, sigma: float = 0.5
) -> list[FrameSequence]:
    return generate_corpus(desk_grammars(), n_sequences, seed, fps=fps, dim=dim, sigma=sigma)
