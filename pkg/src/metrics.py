"""Evaluation metrics: top-k and class-mean accuracy, the Obs/Pred dense table and segmentation scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.models import FrameSequence, SegmentationScores

logger = logging.getLogger("metrics")

OVERLAPS = (0.10, 0.25, 0.50)

DensePredictor = Callable[[FrameSequence, int, int], np.ndarray]


def topk_accuracy(scores: Sequence[np.ndarray] | np.ndarray, targets: Sequence[int], k: int) -> float:
    """Percent of samples whose target is among the k best scores (equal scores rank by lower index)."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("topk_accuracy needs a non-empty samples × classes score matrix")
    if scores.shape[0] != targets.shape[0]:
        raise ValueError(f"{scores.shape[0]} score rows but {targets.shape[0]} targets")
    if not 1 <= k <= scores.shape[1]:
        raise ValueError(f"k must lie in [1, {scores.shape[1]}], got {k}")
    ranking = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    hits = (ranking == targets[:, None]).any(axis=1)
    return 100.0 * float(hits.mean())


def class_mean_accuracy(predictions: Sequence[int] | np.ndarray, targets: Sequence[int] | np.ndarray) -> float:
    """Unweighted mean over the classes present in `targets` of per-class recall, in percent."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError(f"Prediction shape {predictions.shape} does not match target shape {targets.shape}")
    if targets.size == 0:
        raise ValueError("class_mean_accuracy needs at least one target")
    recalls = [float((predictions[targets == c] == c).mean()) for c in np.unique(targets)]
    return 100.0 * float(np.mean(recalls))


def dense_protocol(
    predictor: DensePredictor,
    corpus: Sequence[FrameSequence],
    obs_fractions: Sequence[float] = (0.2, 0.3),
    pred_fractions: Sequence[float] = (0.1, 0.2, 0.3, 0.5),
) -> dict[tuple[float, float], float]:
    """Mean over sequences of the class-mean accuracy on the predicted span, for every (obs, pred) pair.

    `predictor(seq, n_observed, horizon)` returns labels for frames [n_observed, n_observed + horizon).
    """
    table: dict[tuple[float, float], float] = {}
    for obs in obs_fractions:
        for pred in pred_fractions:
            scores = []
            for seq in corpus:
                cut = int(np.floor(obs * seq.length))
                horizon = int(np.floor(pred * (seq.length - cut)))
                if seq.frame_labels is None or cut < 2 or horizon < 1:
                    logger.warning(f"Skipping {seq.name} for obs {obs} / pred {pred}: too short or unlabelled")
                    continue
                labels = np.asarray(predictor(seq, cut, horizon))
                if labels.shape != (horizon,):
                    raise ValueError(f"Predictor returned {labels.shape} labels for a horizon of {horizon}")
                scores.append(class_mean_accuracy(labels, seq.frame_labels[cut : cut + horizon]))
            table[(obs, pred)] = float(np.mean(scores)) if scores else 0.0
    return table


@dataclass(frozen=True)
class LabelRun:
    label: int
    start: int
    end: int  # exclusive


def label_runs(labels: Sequence[int] | np.ndarray) -> list[LabelRun]:
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [labels.size]])
    return [LabelRun(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    distance = np.zeros((len(a) + 1, len(b) + 1), dtype=np.int64)
    distance[:, 0] = np.arange(len(a) + 1)
    distance[0, :] = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            distance[i, j] = min(distance[i - 1, j] + 1, distance[i, j - 1] + 1, distance[i - 1, j - 1] + cost)
    return int(distance[-1, -1])


def edit_score(predictions: Sequence[int], targets: Sequence[int]) -> float:
    predicted = [run.label for run in label_runs(predictions)]
    truth = [run.label for run in label_runs(targets)]
    longest = max(len(predicted), len(truth))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(predicted, truth) / longest)


def overlap_counts(predictions: Sequence[int], targets: Sequence[int], overlap: float) -> tuple[int, int, int]:
    """(tp, fp, fn) with same-label segments matched greedily in descending IoU, each used once."""
    predicted = label_runs(predictions)
    truth = label_runs(targets)
    pairs = []
    for i, p in enumerate(predicted):
        for j, g in enumerate(truth):
            if p.label != g.label:
                continue
            intersection = min(p.end, g.end) - max(p.start, g.start)
            if intersection <= 0:
                continue
            union = max(p.end, g.end) - min(p.start, g.start)
            pairs.append((-intersection / union, i, j))
    pairs.sort()
    used_pred: set[int] = set()
    used_truth: set[int] = set()
    for negative_iou, i, j in pairs:
        if -negative_iou < overlap:
            break
        if i in used_pred or j in used_truth:
            continue
        used_pred.add(i)
        used_truth.add(j)
    tp = len(used_pred)
    return tp, len(predicted) - tp, len(truth) - tp


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def f1_at_overlap(predictions: Sequence[int], targets: Sequence[int], overlap: float) -> float:
    return f1_from_counts(*overlap_counts(predictions, targets, overlap))


def segmentation_scores(
    predictions: Sequence[int] | np.ndarray, targets: Sequence[int] | np.ndarray
) -> SegmentationScores:
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError(f"Prediction length {predictions.shape} does not match target length {targets.shape}")
    f1 = [f1_at_overlap(predictions, targets, overlap) for overlap in OVERLAPS]
    return SegmentationScores(
        f1_10=f1[0],
        f1_25=f1[1],
        f1_50=f1[2],
        edit=edit_score(predictions, targets),
        frame_acc=100.0 * float((predictions == targets).mean()) if targets.size else 100.0,
    )


def corpus_segmentation_scores(pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> SegmentationScores:
    """F1 from summed counts, edit averaged over sequences, accuracy pooled over frames."""
    if not pairs:
        raise ValueError("At least one (prediction, target) pair is required")
    f1 = []
    for overlap in OVERLAPS:
        counts = np.sum([overlap_counts(p, t, overlap) for p, t in pairs], axis=0)
        f1.append(f1_from_counts(*(int(c) for c in counts)))
    correct = sum(int((np.asarray(p) == np.asarray(t)).sum()) for p, t in pairs)
    frames = sum(len(t) for _, t in pairs)
    return SegmentationScores(
        f1_10=f1[0],
        f1_25=f1[1],
        f1_50=f1[2],
        edit=float(np.mean([edit_score(p, t) for p, t in pairs])),
        frame_acc=100.0 * correct / frames,
    )


def segment_count(labels: Sequence[int] | np.ndarray) -> int:
    return len(label_runs(labels))
