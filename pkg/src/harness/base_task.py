import abc
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

from src.autodiff import Tensor
from src.corpus_repository import CorpusRepository
from src.heads import DenseTargets, classify
from src.model import ModelParams
from src.models import EvalReport, FrameSequence, ModelDims, RunConfig, SnippetConfig, Task
from src.snippets import SnippetBank, build_banks

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class Sample:
    """One training example: banks are built from `seq` observed up to frame `t`."""

    seq: FrameSequence
    t: int
    target: int
    activity: int | None = None
    snippet: SnippetConfig | None = None
    dense: DenseTargets | None = None
    window: tuple[int, int] | None = None


class BaseTask(abc.ABC):
    """Abstract base class for the tasks a model can be trained and evaluated on.

    Subclasses decide how samples are drawn from a sequence and how a trained model is scored,
    while the shared classification loss and bank construction live here.
    """

    name: Task

    def __init__(self) -> None:
        self.logger = logging.getLogger("task")

    def can_run(self, task: Task) -> bool:
        """Determine if this task implementation handles the given task."""
        return task == self.name

    def n_recent(self, config: RunConfig) -> int:
        return config.snippet.n_recent

    def n_duration_bins(self, config: RunConfig) -> int:
        return 0

    def model_dims(self, config: RunConfig, corpus: CorpusRepository, n_actions: int) -> ModelDims:
        return ModelDims(
            n_features=corpus.dim,
            n_actions=n_actions,
            n_activities=corpus.n_activities,
            n_recent=self.n_recent(config),
            n_scales=len(config.snippet.spanning_scales),
            n_duration_bins=self.n_duration_bins(config),
        )

    @abc.abstractmethod
    def training_samples(self, seq: FrameSequence, config: RunConfig, rng: np.random.Generator) -> list[Sample]:
        """Draw this epoch's samples from one sequence.

        Args:
            seq: A training sequence
            config: The run configuration
            rng: The training stream
        Returns:
            Zero or more samples; an empty list skips the sequence for this epoch
        """
        raise NotImplementedError

    @abc.abstractmethod
    def evaluate(self, model: ModelParams, sequences: Sequence[FrameSequence], config: RunConfig) -> EvalReport:
        """Score a model on labelled sequences."""
        raise NotImplementedError

    def bank(self, sample: Sample, config: RunConfig) -> SnippetBank:
        return build_banks(sample.seq, sample.t, sample.snippet or config.snippet)

    def sample_loss(self, model: ModelParams, sample: Sample, config: RunConfig, rng: np.random.Generator) -> Tensor:
        activity = sample.activity if model.classifier.activity_head is not None else None
        out = classify(self.bank(sample, config), model, sample.target, activity, training=True, rng=rng)
        return out.loss

    @staticmethod
    def map_sequences(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
        """Apply `fn` to every item, in order, on up to `workers` threads."""
        if workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(fn, items))
