import math
from typing import Sequence

import numpy as np

from src.autodiff import Tensor
from src.heads import (
    RECOGNITION_RECENT_PADS,
    DenseTargets,
    classify,
    dense_rollout,
    duration_bin,
    ensemble_scores,
    expand_segments,
    recognition_scope,
    segment_ground_truth,
    segment_sliding,
    window_bank,
)
from src.harness.base_task import BaseTask, Sample
from src.metrics import class_mean_accuracy, corpus_segmentation_scores, dense_protocol, topk_accuracy
from src.model import ModelParams
from src.models import EvalReport, FrameSequence, RunConfig, SegmentationEval, Task
from src.snippets import SnippetBank, build_banks


def classification_report(task: Task, scores: list[np.ndarray], targets: list[int]) -> EvalReport:
    if not targets:
        return EvalReport(task=task)
    scores_matrix = np.stack(scores)
    predictions = [int(np.argmax(row)) for row in scores_matrix]
    return EvalReport(
        task=task,
        n_samples=len(targets),
        top1=topk_accuracy(scores_matrix, targets, 1),
        top5=topk_accuracy(scores_matrix, targets, min(5, scores_matrix.shape[1])),
        class_mean=class_mean_accuracy(predictions, targets),
    )


class NextActionTask(BaseTask):
    """Anticipate the action that starts tau_alpha seconds after the observation cut."""

    name = Task.NEXT_ACTION

    @staticmethod
    def cut_points(seq: FrameSequence, config: RunConfig) -> list[tuple[int, int]]:
        """(cut frame, upcoming action) for every segment after the first."""
        gap = max(1, int(round(config.anticipation.tau_alpha * seq.fps)))
        cuts = []
        for segment in seq.segments[1:]:
            t = segment.start - gap
            if 1 <= t < seq.length:
                cuts.append((t, segment.action))
        return cuts

    def training_samples(self, seq: FrameSequence, config: RunConfig, rng: np.random.Generator) -> list[Sample]:
        cuts = self.cut_points(seq, config)
        if not cuts:
            return []
        t, action = cuts[int(rng.integers(len(cuts)))]
        return [Sample(seq=seq, t=t, target=action, activity=seq.activity)]

    def evaluate(self, model: ModelParams, sequences: Sequence[FrameSequence], config: RunConfig) -> EvalReport:
        def score(seq: FrameSequence) -> list[tuple[np.ndarray, int]]:
            return [
                (ensemble_scores(classify(build_banks(seq, t, config.snippet), model).action_logits), action)
                for t, action in self.cut_points(seq, config)
            ]

        results = [r for rows in self.map_sequences(score, list(sequences), config.workers) for r in rows]
        return classification_report(self.name, [s for s, _ in results], [a for _, a in results])


class DenseTask(BaseTask):
    """Anticipate the labels of a span of future frames as (action, duration) segments."""

    name = Task.DENSE

    def __init__(self) -> None:
        super().__init__()
        self._skipped: set[str] = set()

    def n_duration_bins(self, config: RunConfig) -> int:
        return config.anticipation.n_duration_bins

    def training_samples(self, seq: FrameSequence, config: RunConfig, rng: np.random.Generator) -> list[Sample]:
        """The observation cuts of the evaluation protocol plus `anticipation.cuts_per_sequence` random cuts.

        Each cut targets its current segment and the segments that follow it.
        """
        if seq.length < 3 or not seq.segments:
            if seq.name not in self._skipped:
                self._skipped.add(seq.name)
                self.logger.warning(f"Skipping {seq.name}: too short or unlabelled for dense anticipation")
            return []
        protocol = sorted({math.floor(obs * seq.length) - 1 for obs in config.obs_fractions})
        cuts = [t for t in protocol if 1 <= t < seq.length - 1]
        cuts += [int(t) for t in rng.integers(1, seq.length - 1, size=config.anticipation.cuts_per_sequence)]
        return [self.cut_sample(seq, t, config) for t in cuts]

    @staticmethod
    def cut_sample(seq: FrameSequence, t: int, config: RunConfig) -> Sample:
        cfg = config.anticipation
        current = seq.segment_at(t)
        # Remaining duration of the current action after the cut.
        remaining = (current.end - t) / seq.fps
        index = seq.segments.index(current)
        future = [
            (s.action, duration_bin(s.length / seq.fps, cfg))
            for s in seq.segments[index + 1 : index + 1 + cfg.max_rollout_steps]
        ]
        targets = DenseTargets(
            current_action=current.action,
            current_duration_bin=duration_bin(remaining, cfg),
            future=future,
        )
        return Sample(seq=seq, t=t, target=current.action, activity=seq.activity, dense=targets)

    def sample_loss(self, model: ModelParams, sample: Sample, config: RunConfig, rng: np.random.Generator) -> Tensor:
        activity = sample.activity if model.classifier.activity_head is not None else None
        horizon = max(1, sample.seq.length - sample.t - 1)
        out = dense_rollout(
            self.bank(sample, config),
            model,
            horizon,
            config.anticipation,
            sample.seq.fps,
            targets=sample.dense,
            activity=activity,
            training=True,
            rng=rng,
        )
        return out.loss

    def predict_span(
        self, model: ModelParams, seq: FrameSequence, n_observed: int, horizon: int, config: RunConfig
    ) -> np.ndarray:
        bank: SnippetBank = build_banks(seq, n_observed - 1, config.snippet)
        out = dense_rollout(bank, model, horizon, config.anticipation, seq.fps)
        return expand_segments(out.segments, horizon)

    def evaluate(self, model: ModelParams, sequences: Sequence[FrameSequence], config: RunConfig) -> EvalReport:
        eligible = [
            s for s in sequences if s.frame_labels is not None and math.floor(min(config.obs_fractions) * s.length) >= 2
        ]
        if not eligible:
            return EvalReport(task=self.name)
        dense_table = dense_protocol(
            lambda s, n, h: self.predict_span(model, s, n, h, config),
            eligible,
            config.obs_fractions,
            config.pred_fractions,
        )
        return EvalReport(
            task=self.name,
            n_samples=len(eligible),
            class_mean=float(np.mean(list(dense_table.values()))),
            dense_table=dense_table,
        )


class RecognitionTask(BaseTask):
    """Classify ground-truth segments from banks around them."""

    name = Task.RECOGNITION

    def n_recent(self, config: RunConfig) -> int:
        return len(RECOGNITION_RECENT_PADS)

    @staticmethod
    def segment_sample(seq: FrameSequence, index: int, config: RunConfig) -> Sample:
        segment = seq.segments[index]
        scope = recognition_scope(segment.start / seq.fps, segment.end / seq.fps, config.snippet, duration=seq.duration)
        t = min(max(1, segment.end), seq.length - 1)
        return Sample(seq=seq, t=t, target=segment.action, activity=seq.activity, snippet=scope)

    def training_samples(self, seq: FrameSequence, config: RunConfig, rng: np.random.Generator) -> list[Sample]:
        if seq.length < 2 or not seq.segments:
            return []
        return [self.segment_sample(seq, int(rng.integers(len(seq.segments))), config)]

    def evaluate(self, model: ModelParams, sequences: Sequence[FrameSequence], config: RunConfig) -> EvalReport:
        def score(seq: FrameSequence) -> list[tuple[np.ndarray, int]]:
            if seq.length < 2:
                return []
            rows = []
            for index in range(len(seq.segments)):
                sample = self.segment_sample(seq, index, config)
                rows.append((ensemble_scores(classify(self.bank(sample, config), model).action_logits), sample.target))
            return rows

        results = [r for rows in self.map_sequences(score, list(sequences), config.workers) for r in rows]
        return classification_report(self.name, [s for s, _ in results], [a for _, a in results])


class SegmentationTask(BaseTask):
    """Label every frame by classifying sliding windows, or whole annotated segments."""

    name = Task.SEGMENTATION

    def training_samples(self, seq: FrameSequence, config: RunConfig, rng: np.random.Generator) -> list[Sample]:
        if seq.frame_labels is None:
            return []
        width = min(seq.length, max(1, int(round(config.window_seconds * seq.fps))))
        start = int(rng.integers(0, seq.length - width + 1))
        end = start + width - 1
        target = int(seq.frame_labels[(start + end) // 2])
        return [Sample(seq=seq, t=end, target=target, activity=seq.activity, window=(start, end))]

    def bank(self, sample: Sample, config: RunConfig) -> SnippetBank:
        start, end = sample.window
        return window_bank(sample.seq.window(start, end), config.snippet)

    def predict_frames(
        self, model: ModelParams, sequences: Sequence[FrameSequence], config: RunConfig, mode: SegmentationEval
    ) -> list[np.ndarray]:
        """Frame labels per sequence, from sliding windows or from whole ground-truth segments."""
        if mode is SegmentationEval.GT_SEGMENTS:

            def segment(seq: FrameSequence) -> np.ndarray:
                return segment_ground_truth(seq, model, config.snippet)

        else:

            def segment(seq: FrameSequence) -> np.ndarray:
                return segment_sliding(seq, model, config.window_seconds, config.window_stride, config.snippet)

        return self.map_sequences(segment, list(sequences), config.workers)

    def evaluate(self, model: ModelParams, sequences: Sequence[FrameSequence], config: RunConfig) -> EvalReport:
        labelled = [s for s in sequences if s.frame_labels is not None]
        if not labelled:
            return EvalReport(task=self.name)
        predictions = self.predict_frames(model, labelled, config, config.segmentation_eval)
        seg = corpus_segmentation_scores([(p, s.frame_labels) for p, s in zip(predictions, labelled)])
        return EvalReport(task=self.name, n_samples=sum(s.length for s in labelled), seg=seg)


def default_tasks() -> list[BaseTask]:
    return [NextActionTask(), DenseTask(), RecognitionTask(), SegmentationTask()]
