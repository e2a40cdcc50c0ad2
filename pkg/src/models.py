from __future__ import annotations

import math
from enum import Enum
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Pooling(str, Enum):
    MAX = "max"
    MEAN = "mean"
    SAMPLE = "sample"


class Task(str, Enum):
    NEXT_ACTION = "next_action"
    DENSE = "dense"
    RECOGNITION = "recognition"
    SEGMENTATION = "segmentation"


class InputMode(str, Enum):
    FEATURES = "features"
    FRAME_GT = "frame_gt"
    FRAME_GT_FEATURES = "frame_gt_features"
    PREDICTED_SEG = "predicted_seg"
    PREDICTED_SEG_FEATURES = "predicted_seg_features"

    @property
    def keeps_features(self) -> bool:
        return self in (InputMode.FEATURES, InputMode.FRAME_GT_FEATURES, InputMode.PREDICTED_SEG_FEATURES)

    @property
    def predicted(self) -> bool:
        return self in (InputMode.PREDICTED_SEG, InputMode.PREDICTED_SEG_FEATURES)


class SegmentationEval(str, Enum):
    """Which spans the segmentation task classifies at evaluation."""

    SLIDING = "sliding"
    GT_SEGMENTS = "gt_segments"


class Coupling(str, Enum):
    """How the two attention units of a coupling block are wired."""

    FULL = "full"
    SPANNING_ONLY = "ss"
    RECENT_ONLY = "rr"
    NONE = "none"


class Segment(BaseModel):
    """A maximal run of one action. `end` is inclusive."""

    start: int
    end: int
    action: int

    @model_validator(mode="after")
    def _check_bounds(self) -> Segment:
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"Invalid segment bounds [{self.start}, {self.end}]")
        if self.action < 0:
            raise ValueError(f"Invalid action id {self.action}")
        return self

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def segments_from_labels(labels: np.ndarray) -> list[Segment]:
    """Split frame labels into maximal constant runs."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change - 1, [labels.size - 1]])
    return [Segment(start=int(s), end=int(e), action=int(labels[s])) for s, e in zip(starts, ends)]


class FrameSequence(BaseModel):
    """Per-frame features of one video with optional ground truth."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str = "sequence"
    features: np.ndarray
    frame_labels: np.ndarray | None = None
    activity: int | None = None
    fps: float = 1.0
    segments: list[Segment] = Field(default_factory=list)

    @field_validator("features", mode="before")
    @classmethod
    def _as_feature_matrix(cls, value: object) -> np.ndarray:
        array = np.asarray(value, dtype=np.float64)
        if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
            raise ValueError(f"Features must be a non-empty T×D matrix, got shape {array.shape}")
        return array

    @field_validator("frame_labels", mode="before")
    @classmethod
    def _as_label_vector(cls, value: object) -> np.ndarray | None:
        if value is None:
            return None
        array = np.asarray(value, dtype=np.int64)
        if array.ndim != 1:
            raise ValueError(f"Frame labels must be a vector, got shape {array.shape}")
        if array.size and array.min() < 0:
            raise ValueError("Frame labels must be non-negative")
        return array

    @model_validator(mode="after")
    def _check_alignment(self) -> FrameSequence:
        if self.fps <= 0 or not math.isfinite(self.fps):
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.frame_labels is not None:
            if self.frame_labels.shape[0] != self.features.shape[0]:
                raise ValueError(
                    f"Label length {self.frame_labels.shape[0]} does not match {self.features.shape[0]} frames"
                )
            if not self.segments:
                self.segments = segments_from_labels(self.frame_labels)
        return self

    @property
    def length(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return self.length / self.fps

    def window(self, start: int, end: int) -> FrameSequence:
        """Frames [start, end] (inclusive) as a new sequence with re-based labels."""
        if not 0 <= start <= end < self.length:
            raise ValueError(f"Window [{start}, {end}] outside sequence of {self.length} frames")
        labels = None if self.frame_labels is None else self.frame_labels[start : end + 1]
        return FrameSequence(
            name=f"{self.name}[{start}:{end}]",
            features=self.features[start : end + 1],
            frame_labels=labels,
            activity=self.activity,
            fps=self.fps,
        )

    def with_features(self, features: np.ndarray) -> FrameSequence:
        return FrameSequence(
            name=self.name,
            features=features,
            frame_labels=self.frame_labels,
            activity=self.activity,
            fps=self.fps,
            segments=list(self.segments),
        )

    def segment_at(self, frame: int) -> Segment:
        for segment in self.segments:
            if segment.start <= frame <= segment.end:
                return segment
        raise ValueError(f"No segment covers frame {frame} of {self.name}")


class SnippetConfig(BaseModel):
    """Bank geometry. Offsets and ranges are in seconds."""

    recent_starts: list[float] = Field(default_factory=lambda: [10.0, 20.0, 30.0])
    recent_k: int = 5
    spanning_scales: list[int] = Field(default_factory=lambda: [10, 15, 20])
    spanning_start_fraction: float = 0.0
    pooling: Pooling = Pooling.MAX
    # Explicit ranges replace the start offsets and fraction (recognition scope).
    recent_ranges: list[tuple[float, float]] | None = None
    spanning_range: tuple[float, float] | None = None

    @model_validator(mode="after")
    def _check(self) -> SnippetConfig:
        if self.recent_k < 1 or any(k < 1 for k in self.spanning_scales):
            raise ValueError("All snippet counts must be at least 1")
        if not self.spanning_scales:
            raise ValueError("At least one spanning scale is required")
        if not self.recent_starts and not self.recent_ranges:
            raise ValueError("At least one recent start is required")
        if any(offset <= 0 for offset in self.recent_starts):
            raise ValueError(f"Recent start offsets must be positive, got {self.recent_starts}")
        if not 0.0 <= self.spanning_start_fraction <= 1.0:
            raise ValueError(f"spanning_start_fraction must lie in [0, 1], got {self.spanning_start_fraction}")
        for a, b in [*(self.recent_ranges or []), *([self.spanning_range] if self.spanning_range else [])]:
            if a > b:
                raise ValueError(f"Invalid range [{a}, {b}]")
        return self

    @property
    def n_recent(self) -> int:
        return len(self.recent_ranges) if self.recent_ranges else len(self.recent_starts)


class ModelConfig(BaseModel):
    hidden: int = 1024
    attn_dim: int | None = None
    dropout: float = 0.3
    rnn_hidden: int = 512
    use_nlb: bool = True
    coupling: Coupling = Coupling.FULL
    single_cb: bool = False
    single_tab: bool = False
    use_tab: bool = True
    spanning_fusion: Literal["max", "linear"] = "max"
    use_activity: bool = True

    @model_validator(mode="after")
    def _check(self) -> ModelConfig:
        if self.hidden < 1 or self.rnn_hidden < 1 or (self.attn_dim is not None and self.attn_dim < 1):
            raise ValueError("Layer widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"Dropout rate must lie in [0, 1), got {self.dropout}")
        return self


class AnticipationConfig(BaseModel):
    tau_alpha: float = 1.0
    duration_interval: float = 20.0
    n_duration_bins: int = 8
    max_rollout_steps: int = 64
    # Random cuts drawn from each training sequence per epoch.
    cuts_per_sequence: int = 4

    @model_validator(mode="after")
    def _check(self) -> AnticipationConfig:
        if self.tau_alpha <= 0 or self.duration_interval <= 0:
            raise ValueError("tau_alpha and duration_interval must be positive")
        if self.n_duration_bins < 1 or self.max_rollout_steps < 1 or self.cuts_per_sequence < 1:
            raise ValueError("n_duration_bins, max_rollout_steps and cuts_per_sequence must be at least 1")
        return self


class OptimizerConfig(BaseModel):
    lr: float = 1e-4
    batch_size: int = 10
    epochs: int = 25
    decay_every: int = 10
    decay_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @model_validator(mode="after")
    def _check(self) -> OptimizerConfig:
        if self.lr < 0:
            raise ValueError(f"Learning rate must be non-negative, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1 or self.decay_every < 1:
            raise ValueError("batch_size, epochs and decay_every must be at least 1")
        if not 0 < self.decay_factor <= 1 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("Invalid optimizer rates")
        return self


class RunConfig(BaseModel):
    task: Task
    seed: int
    corpus: Path
    out: Path
    input_mode: InputMode = InputMode.FEATURES
    # Segmentation checkpoint whose sliding-window output feeds the predicted_seg input modes.
    segmentation_checkpoint: Path | None = None
    segmentation_eval: SegmentationEval = SegmentationEval.SLIDING
    snippet: SnippetConfig = Field(default_factory=SnippetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    anticipation: AnticipationConfig = Field(default_factory=AnticipationConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    validation_fraction: float = 0.2
    window_seconds: float = 2.0
    window_stride: float = 1.0
    obs_fractions: list[float] = Field(default_factory=lambda: [0.2, 0.3])
    pred_fractions: list[float] = Field(default_factory=lambda: [0.1, 0.2, 0.3, 0.5])
    precision: Literal["float64", "float32"] = "float64"
    workers: int = 1

    @model_validator(mode="after")
    def _check(self) -> RunConfig:
        if self.seed < 0:
            raise ValueError(f"Seed must be non-negative, got {self.seed}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        if self.window_seconds <= 0 or self.window_stride <= 0:
            raise ValueError("Window length and stride must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        for fraction in [*self.obs_fractions, *self.pred_fractions]:
            if not 0.0 < fraction <= 1.0:
                raise ValueError(f"Protocol fractions must lie in (0, 1], got {fraction}")
        if self.task is Task.DENSE and not self.obs_fractions:
            raise ValueError("Dense anticipation needs at least one observation fraction")
        if self.input_mode.predicted and self.segmentation_checkpoint is None:
            raise ValueError(f"Input mode {self.input_mode.value} needs segmentation_checkpoint")
        if self.input_mode.predicted and self.task is Task.SEGMENTATION:
            raise ValueError("A segmentation run cannot take predicted segmentation as input")
        return self


class ModelDims(BaseModel):
    """Extents that size the parameter tensors; derived from the corpus and the task."""

    n_features: int
    n_actions: int
    n_activities: int = 0
    n_recent: int = 1
    n_scales: int = 1
    n_duration_bins: int = 0

    @model_validator(mode="after")
    def _check(self) -> ModelDims:
        if self.n_features < 1 or self.n_recent < 1 or self.n_scales < 1:
            raise ValueError("Model extents must be positive")
        if self.n_actions < 2:
            raise ValueError(f"At least two action classes are required, got {self.n_actions}")
        return self


class SegmentationScores(BaseModel):
    f1_10: float
    f1_25: float
    f1_50: float
    edit: float
    frame_acc: float

    @model_validator(mode="after")
    def _check_range(self) -> SegmentationScores:
        for name, value in self.model_dump().items():
            _check_percent(name, value)
        return self


class EvalReport(BaseModel):
    task: Task
    n_samples: int = 0
    top1: float | None = None
    top5: float | None = None
    class_mean: float | None = None
    dense_table: dict[tuple[float, float], float] = Field(default_factory=dict)
    seg: SegmentationScores | None = None

    @model_validator(mode="after")
    def _check_range(self) -> EvalReport:
        for name in ("top1", "top5", "class_mean"):
            value = getattr(self, name)
            if value is not None:
                _check_percent(name, value)
        for key, value in self.dense_table.items():
            _check_percent(f"dense {key}", value)
        return self

    def primary_metric(self) -> float:
        """The single number an epoch or ablation row is judged by."""
        if self.seg is not None:
            return self.seg.frame_acc
        if self.top1 is not None:
            return self.top1
        if self.class_mean is not None:
            return self.class_mean
        return float("nan")


def _check_percent(name: str, value: float) -> None:
    if not 0.0 <= value <= 100.0:
        raise ValueError(f"{name} must lie in [0, 100], got {value}")
