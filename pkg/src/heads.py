"""
Task heads on top of the temporal aggregates: next-action classification with the complex-activity
auxiliary loss, summed-score ensembling, dense anticipation rollout, recognition scoping and sliding-window
segmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from src.autodiff import Tensor, concat, cross_entropy, one_hot, relu, softmax
from src.blocks import lstm_step, lstm_zero_state
from src.errors import ConfigurationError
from src.model import ModelParams
from src.models import AnticipationConfig, FrameSequence, SnippetConfig
from src.snippets import SnippetBank, build_banks

# Padding in seconds around a ground-truth segment for recognition banks.
RECOGNITION_SPANNING_PAD = 6.0
RECOGNITION_RECENT_PADS = (0.0, 1.0, 2.0, 3.0)


@dataclass
class ClassifyOutput:
    action_logits: list[Tensor]
    activity_logits: Tensor | None
    loss: Tensor | None
    recent: list[Tensor]
    spanning: list[Tensor]


def classify(
    bank: SnippetBank,
    model: ModelParams,
    target: int | None = None,
    activity: int | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ClassifyOutput:
    """Per-start action logits, activity logits and (when targets are given) the classification loss."""
    aggregates = model.encode(bank, training, rng)
    recent = [r for r, _ in aggregates]
    spanning = [s for _, s in aggregates]
    action_logits = [model.classifier.action_head(r) for r in recent]

    activity_head = model.classifier.activity_head
    activity_logits = activity_head(concat(spanning)) if activity_head is not None else None

    if training and target is None:
        raise ValueError("Training requires an action target")
    if training and activity_logits is not None and activity is None:
        raise ValueError("Training with the activity head requires an activity label")

    loss = None
    if target is not None:
        terms = [cross_entropy(logits, target) for logits in action_logits]
        if activity_logits is not None and activity is not None:
            terms.append(cross_entropy(activity_logits, activity))
        loss = terms[0]
        for term in terms[1:]:
            loss = loss + term
    return ClassifyOutput(action_logits, activity_logits, loss, recent, spanning)


def ensemble_scores(action_logits: Sequence[Tensor | np.ndarray]) -> np.ndarray:
    """Class-wise sum of softmax probabilities over recent starts."""
    if not action_logits:
        raise ValueError("At least one logit vector is required")
    probabilities = []
    for logits in action_logits:
        values = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
        shifted = np.exp(values - values.max())
        probabilities.append(shifted / shifted.sum())
    # fsum makes the total independent of start order.
    return np.array([math.fsum(column) for column in zip(*probabilities)])


def ensemble_infer(action_logits: Sequence[Tensor | np.ndarray]) -> int:
    """Argmax of the summed softmax scores; ties go to the lowest class index."""
    return int(np.argmax(ensemble_scores(action_logits)))


@dataclass
class DenseTargets:
    current_action: int
    current_duration_bin: int
    future: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class RolloutOutput:
    segments: list[tuple[int, float]]
    loss: Tensor | None = None


def duration_bin(seconds: float, cfg: AnticipationConfig) -> int:
    return min(max(int(seconds // cfg.duration_interval), 0), cfg.n_duration_bins - 1)


def decode_duration(bin_index: int, cfg: AnticipationConfig) -> float:
    """Bin midpoint in seconds."""
    return (bin_index + 0.5) * cfg.duration_interval


def dense_rollout(
    bank: SnippetBank,
    model: ModelParams,
    horizon_frames: int,
    cfg: AnticipationConfig,
    fps: float,
    targets: DenseTargets | None = None,
    activity: int | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> RolloutOutput:
    """Anticipate the next `horizon_frames` frames as (action, frames) segments.

    With `targets` the cell is teacher-forced over the ground-truth future and the loss is returned;
    without them it runs free and the segments are returned, the last one truncated to the horizon.
    """
    if horizon_frames < 1:
        raise ValueError(f"Horizon must be at least one frame, got {horizon_frames}")
    dense = model.dense
    if dense is None or model.dims.n_duration_bins != cfg.n_duration_bins:
        have = 0 if dense is None else model.dims.n_duration_bins
        raise ConfigurationError(f"Model has {have} duration bins, anticipation config has {cfg.n_duration_bins}")

    target = targets.current_action if targets is not None else None
    cls = classify(bank, model, target=target, activity=activity, training=training, rng=rng)
    recent = concat(cls.recent)
    duration_logits = dense.duration_head(recent)
    scores = [softmax(logits) for logits in cls.action_logits]
    encoding = relu(dense.rollout_in(concat([recent, *cls.spanning, *scores])))
    n_actions, n_bins = model.dims.n_actions, cfg.n_duration_bins

    def step(state: tuple[Tensor, Tensor], action: int, bin_index: int) -> tuple[Tensor, Tensor]:
        x = concat([encoding, one_hot(action, n_actions), one_hot(bin_index, n_bins)])
        return lstm_step(x, state, dense.rnn)

    state = lstm_zero_state(dense.rnn.hidden_size)
    if targets is not None:
        loss = cls.loss + cross_entropy(duration_logits, targets.current_duration_bin)
        previous = (targets.current_action, targets.current_duration_bin)
        future_terms = None
        for action, bin_index in targets.future:
            state = step(state, *previous)
            h = state[0]
            term = cross_entropy(dense.step_action(h), action) + cross_entropy(dense.step_duration(h), bin_index)
            future_terms = term if future_terms is None else future_terms + term
            previous = (action, bin_index)
        if future_terms is not None:
            loss = loss + future_terms * (1.0 / len(targets.future))
        return RolloutOutput(segments=[], loss=loss)

    current = ensemble_infer(cls.action_logits)
    current_bin = int(np.argmax(duration_logits.data))
    segments = [(current, decode_duration(current_bin, cfg) * fps)]
    covered = segments[0][1]
    previous = (current, current_bin)
    steps = 0
    while covered < horizon_frames and steps < cfg.max_rollout_steps:
        state = step(state, *previous)
        action = int(np.argmax(dense.step_action(state[0]).data))
        bin_index = int(np.argmax(dense.step_duration(state[0]).data))
        length = decode_duration(bin_index, cfg) * fps
        segments.append((action, length))
        covered += length
        previous = (action, bin_index)
        steps += 1
    return RolloutOutput(segments=_fit_to_horizon(segments, horizon_frames))


def _fit_to_horizon(segments: list[tuple[int, float]], horizon: int) -> list[tuple[int, float]]:
    """Truncate (or, if the step cap was hit, stretch) the last segment so the total equals `horizon`."""
    fitted: list[tuple[int, float]] = []
    covered = 0.0
    for action, length in segments:
        if covered + length >= horizon:
            fitted.append((action, float(horizon) - covered))
            return fitted
        fitted.append((action, length))
        covered += length
    action, length = fitted[-1]
    fitted[-1] = (action, float(horizon) - (covered - length))
    return fitted


def expand_segments(segments: Sequence[tuple[int, float]], horizon: int) -> np.ndarray:
    """Frame labels for the first `horizon` frames covered by (action, frames) segments."""
    bounds = np.rint(np.cumsum([length for _, length in segments]))
    bounds[-1] = horizon
    actions = np.array([action for action, _ in segments], dtype=np.int64)
    index = np.searchsorted(bounds, np.arange(horizon), side="right")
    return actions[np.minimum(index, len(actions) - 1)]


def recognition_scope(
    t_start: float, t_end: float, cfg: SnippetConfig, duration: float | None = None
) -> SnippetConfig:
    """Bank ranges (seconds) for recognising the segment [t_start, t_end]."""
    if t_start > t_end:
        raise ValueError(f"Segment start {t_start} is after its end {t_end}")

    def clamp(value: float) -> float:
        value = max(0.0, value)
        return min(value, duration) if duration is not None else value

    return cfg.model_copy(
        update={
            "spanning_range": (
                clamp(t_start - RECOGNITION_SPANNING_PAD),
                clamp(t_end + RECOGNITION_SPANNING_PAD),
            ),
            "recent_ranges": [(clamp(t_start - pad), clamp(t_end + pad)) for pad in RECOGNITION_RECENT_PADS],
        }
    )


def sliding_windows(length: int, fps: float, window_seconds: float, stride_seconds: float) -> list[tuple[int, int]]:
    """Inclusive frame bounds of the windows; the last window always ends at the final frame."""
    if window_seconds <= 0 or stride_seconds <= 0:
        raise ValueError("Window length and stride must be positive")
    width = max(1, int(round(window_seconds * fps)))
    stride = max(1, int(round(stride_seconds * fps)))
    if length <= width:
        return [(0, length - 1)]
    windows = [(start, start + width - 1) for start in range(0, length - width + 1, stride)]
    if windows[-1][1] < length - 1:
        windows.append((length - width, length - 1))
    return windows


def window_bank(window: FrameSequence, cfg: SnippetConfig) -> SnippetBank:
    """Banks over a whole window, observed up to its last frame."""
    if window.length == 1:
        window = FrameSequence(name=window.name, features=np.repeat(window.features, 2, axis=0), fps=window.fps)
    return build_banks(window, window.length - 1, cfg)


def _model_window_classifier(model: ModelParams | None, cfg: SnippetConfig) -> Callable[[FrameSequence], int]:
    if model is None:
        raise ValueError("Segmentation needs a model or a window classifier")

    def window_classifier(window: FrameSequence) -> int:
        return ensemble_infer(classify(window_bank(window, cfg), model).action_logits)

    return window_classifier


def segment_sliding(
    seq: FrameSequence,
    model: ModelParams | None,
    window_seconds: float,
    stride_seconds: float,
    cfg: SnippetConfig,
    window_classifier: Callable[[FrameSequence], int] | None = None,
) -> np.ndarray:
    """Frame labels from classifying sliding windows; each frame takes the label of the nearest window centre."""
    window_classifier = window_classifier or _model_window_classifier(model, cfg)
    windows = sliding_windows(seq.length, seq.fps, window_seconds, stride_seconds)
    labels = np.array([window_classifier(seq.window(a, b)) for a, b in windows], dtype=np.int64)
    centres = np.array([(a + b) / 2.0 for a, b in windows])
    frames = np.arange(seq.length)
    nearest = np.abs(frames[:, None] - centres[None, :]).argmin(axis=1)
    return labels[nearest]


def segment_ground_truth(
    seq: FrameSequence,
    model: ModelParams | None,
    cfg: SnippetConfig,
    window_classifier: Callable[[FrameSequence], int] | None = None,
) -> np.ndarray:
    """Frame labels from classifying each annotated segment as one window."""
    if not seq.segments:
        raise ValueError(f"{seq.name} has no segments to classify")
    window_classifier = window_classifier or _model_window_classifier(model, cfg)
    labels = np.zeros(seq.length, dtype=np.int64)
    for segment in seq.segments:
        labels[segment.start : segment.end + 1] = window_classifier(seq.window(segment.start, segment.end))
    return labels
