import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

from src.autodiff import AdamState, Tape, adam_step, collect_grads, learning_rate_at, set_precision, zero_grad
from src.checkpoint import Checkpoint
from src.corpus_repository import CorpusRepository
from src.errors import ConfigurationError
from src.harness.base_task import BaseTask
from src.harness.tasks import SegmentationTask, default_tasks
from src.model import ModelParams
from src.models import Coupling, EvalReport, FrameSequence, InputMode, RunConfig, SegmentationEval, Task
from src.report_generator import ReportGenerator
from src.rng import INIT_STREAM, SPLIT_STREAM, TRAIN_STREAM, make_rng

LOSS_CURVE_COLUMNS = ["epoch", "lr", "train_loss", "heldout_metric"]
ABLATION_COLUMNS = ["axis", "variant", "metric", "top1", "top5", "class_mean", "final_train_loss", "seed"]


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    loss_curve: pd.DataFrame
    model: ModelParams
    train_corpus: CorpusRepository
    heldout_corpus: CorpusRepository


class Runner:
    """Binds a run configuration to the task that serves it.

    The task is chosen from the available task implementations the same way for training and evaluation:
    the first one whose `can_run` accepts the configured task.
    """

    def __init__(self, config: RunConfig, tasks: list[BaseTask] | None = None) -> None:
        self.logger = logging.getLogger("trainer")
        self.config = config
        self.tasks = tasks if tasks is not None else default_tasks()
        self.task = self.resolve_task(config.task)

    def resolve_task(self, task: Task) -> BaseTask:
        for candidate in self.tasks:
            if candidate.can_run(task):
                return candidate
        raise ConfigurationError(f"No task implementation for {task.value}")

    def prepare(self, corpus: CorpusRepository, n_actions: int | None = None) -> tuple[CorpusRepository, int]:
        mode = self.config.input_mode
        if not mode.predicted:
            n_actions = n_actions or max(2, corpus.n_actions)
            return corpus.with_input_mode(mode, n_actions), n_actions
        checkpoint = load_segmentation_checkpoint(self.config.segmentation_checkpoint)
        n_actions = n_actions or max(2, corpus.n_actions, checkpoint.dims.n_actions)
        predicted = predict_segmentation(checkpoint, corpus)
        return corpus.with_input_mode(mode, n_actions, predicted), n_actions

    def train(self, corpus: CorpusRepository) -> TrainingResult:
        """Mini-batch Adam over per-epoch resampled cuts, with the step learning-rate schedule."""
        config = self.config
        set_precision(config.precision)
        prepared, n_actions = self.prepare(corpus)
        train_corpus, heldout_corpus = prepared.split(config.validation_fraction, make_rng(config.seed, SPLIT_STREAM))
        dims = self.task.model_dims(config, prepared, n_actions)
        model = ModelParams.init(config.model, dims, make_rng(config.seed, INIT_STREAM))
        params = model.parameters()
        rng = make_rng(config.seed, TRAIN_STREAM)
        opt = config.optimizer
        optimizer = AdamState(lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
        self.logger.info(
            f"Training {config.task.value} on {train_corpus.count} sequences "
            f"({heldout_corpus.count} held out), {model.size()} parameters"
        )

        rows = []
        sequences = train_corpus.sequences
        for epoch in range(1, opt.epochs + 1):
            optimizer.lr = learning_rate_at(epoch, opt.lr, opt.decay_every, opt.decay_factor)
            drawn = [s for seq in sequences for s in self.task.training_samples(seq, config, rng)]
            samples = [drawn[i] for i in rng.permutation(len(drawn))]
            losses = []
            for start in range(0, len(samples), opt.batch_size):
                batch = samples[start : start + opt.batch_size]
                zero_grad(params)
                with Tape() as tape:
                    total = self.task.sample_loss(model, batch[0], config, rng)
                    for sample in batch[1:]:
                        total = total + self.task.sample_loss(model, sample, config, rng)
                    loss = total * (1.0 / len(batch))
                    tape.backward(loss)
                adam_step(params, collect_grads(params), optimizer)
                losses.append(loss.item())
                self.logger.debug(f"Epoch {epoch} batch {start // opt.batch_size}: loss {losses[-1]:.4f}")

            if not losses:
                self.logger.warning(f"Epoch {epoch}: no training samples could be drawn")
            train_loss = float(np.mean(losses)) if losses else math.nan
            heldout_metric = math.nan
            if heldout_corpus.count:
                heldout_metric = self.task.evaluate(model, heldout_corpus.sequences, config).primary_metric()
            self.logger.info(
                f"Epoch {epoch}/{opt.epochs}  lr={optimizer.lr:.1e}  "
                f"train_loss={train_loss:.4f}  heldout={heldout_metric:.2f}"
            )
            rows.append([epoch, optimizer.lr, train_loss, heldout_metric])

        checkpoint = Checkpoint.from_training(
            config,
            model,
            optimizer,
            rng,
            metadata={"epochs": opt.epochs, "n_train": train_corpus.count, "n_heldout": heldout_corpus.count},
        )
        return TrainingResult(
            checkpoint=checkpoint,
            loss_curve=pd.DataFrame(rows, columns=LOSS_CURVE_COLUMNS),
            model=model,
            train_corpus=train_corpus,
            heldout_corpus=heldout_corpus,
        )

    def evaluate(self, model: ModelParams, sequences: Sequence[FrameSequence]) -> EvalReport:
        report = self.task.evaluate(model, sequences, self.config)
        self.logger.info(f"Evaluated {report.n_samples} samples: primary metric {report.primary_metric():.2f}")
        return report


def load_segmentation_checkpoint(path: str | Path | None) -> Checkpoint:
    if path is None:
        raise ConfigurationError("No segmentation checkpoint configured")
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Segmentation checkpoint not found: {path}")
    checkpoint = Checkpoint.load(path)
    if checkpoint.config.task is not Task.SEGMENTATION:
        raise ConfigurationError(f"{path} was trained for {checkpoint.config.task.value}, not segmentation")
    if checkpoint.config.input_mode is not InputMode.FEATURES:
        raise ConfigurationError(f"{path} must be trained on features, not {checkpoint.config.input_mode.value}")
    return checkpoint


def predict_segmentation(checkpoint: Checkpoint, corpus: CorpusRepository) -> dict[str, np.ndarray]:
    """Sliding-window frame labels of a segmentation checkpoint, keyed by sequence name."""
    model, config = checkpoint.build_model(), checkpoint.config
    predictions = SegmentationTask().predict_frames(model, corpus.sequences, config, SegmentationEval.SLIDING)
    logging.getLogger("trainer").info(f"Segmented {corpus.count} sequences with checkpoint {checkpoint.digest()[:12]}")
    return {seq.name: labels for seq, labels in zip(corpus.sequences, predictions)}


def as_repository(corpus: CorpusRepository | Sequence[FrameSequence] | str | Path) -> CorpusRepository:
    if isinstance(corpus, CorpusRepository):
        return corpus
    if isinstance(corpus, (str, Path)):
        return CorpusRepository.from_directory(corpus)
    return CorpusRepository(list(corpus))


def train(config: RunConfig, corpus: CorpusRepository | Sequence[FrameSequence] | str | Path) -> TrainingResult:
    return Runner(config).train(as_repository(corpus))


def evaluate(
    checkpoint: Checkpoint,
    corpus: CorpusRepository | Sequence[FrameSequence] | str | Path,
    task: Task | None = None,
    out: str | Path | None = None,
) -> EvalReport:
    """Evaluate a checkpoint; with `out`, write `report.txt` and `report.html` there."""
    config = checkpoint.config
    task = task or config.task
    if task != config.task:
        raise ConfigurationError(f"Checkpoint was trained for {config.task.value}, not {task.value}")
    runner = Runner(config)
    set_precision(config.precision)
    prepared, _ = runner.prepare(as_repository(corpus), checkpoint.dims.n_actions)
    report = runner.evaluate(checkpoint.build_model(), prepared.sequences)
    if out is not None:
        generator = ReportGenerator()
        generator.write_summary(report, Path(out) / "report.txt")
        generator.generate_report(report, output_path=Path(out) / "report.html")
    return report


def _with_section(config: RunConfig, section: str, **changes: Any) -> RunConfig:
    data = config.model_dump()
    data[section] = {**data[section], **changes}
    return RunConfig.model_validate(data)


ABLATION_AXES: dict[str, Callable[[RunConfig, Any], RunConfig]] = {
    "pooling_type": lambda c, v: _with_section(c, "snippet", pooling=v),
    "recent_starts": lambda c, v: _with_section(c, "snippet", recent_starts=list(v)),
    "spanning_scales": lambda c, v: _with_section(c, "snippet", spanning_scales=list(v)),
    "recent_K": lambda c, v: _with_section(c, "snippet", recent_k=v),
    "spanning_start_fraction": lambda c, v: _with_section(c, "snippet", spanning_start_fraction=v),
    "no_Z": lambda c, v: _with_section(c, "model", use_activity=not v),
    "no_NLB": lambda c, v: _with_section(c, "model", use_nlb=not v),
    "couple_SS_only": lambda c, v: _with_section(c, "model", coupling=Coupling.SPANNING_ONLY if v else Coupling.FULL),
    "couple_RR_only": lambda c, v: _with_section(c, "model", coupling=Coupling.RECENT_ONLY if v else Coupling.FULL),
    "no_CB": lambda c, v: _with_section(c, "model", coupling=Coupling.NONE if v else Coupling.FULL),
    "single_CB": lambda c, v: _with_section(c, "model", single_cb=v),
    "single_TAB": lambda c, v: _with_section(c, "model", single_tab=v),
    "no_TAB": lambda c, v: _with_section(c, "model", use_tab=not v),
    "span_linear": lambda c, v: _with_section(c, "model", spanning_fusion="linear" if v else "max"),
}


def default_axis_values(config: RunConfig, axis: str) -> list[Any]:
    if axis == "pooling_type":
        return ["sample", "mean", "max"]
    if axis == "recent_starts":
        starts = config.snippet.recent_starts
        return [[s] for s in starts] + ([starts] if len(starts) > 1 else [])
    if axis == "spanning_scales":
        scales = config.snippet.spanning_scales
        return [[k] for k in scales] + ([scales] if len(scales) > 1 else [])
    if axis == "recent_K":
        return [1, 3, 5, 10]
    if axis == "spanning_start_fraction":
        return [0.0, 0.5, 0.9]
    return [False, True]


def ablate(
    config: RunConfig,
    corpus: CorpusRepository | Sequence[FrameSequence] | str | Path,
    axis: str,
    values: Sequence[Any] | None = None,
) -> pd.DataFrame:
    """Train and evaluate one variant per value of `axis`, all with the same seed and corpus."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"Unknown ablation axis {axis!r}, expected one of {sorted(ABLATION_AXES)}")
    corpus = as_repository(corpus)
    values = list(values) if values is not None else default_axis_values(config, axis)
    variants = [(value, ABLATION_AXES[axis](config, value)) for value in values]
    logger = logging.getLogger("trainer")

    def run_variant(variant: tuple[Any, RunConfig]) -> list[Any]:
        value, variant_config = variant
        result = train(variant_config, corpus)
        scored = result.heldout_corpus if result.heldout_corpus.count else result.train_corpus
        report = Runner(variant_config).evaluate(result.model, scored.sequences)
        final_loss = float(result.loss_curve["train_loss"].iloc[-1])
        logger.info(f"Ablation {axis}={value}: metric {report.primary_metric():.2f}")
        metrics = [report.primary_metric(), report.top1, report.top5, report.class_mean]
        return [axis, str(value), *metrics, final_loss, variant_config.seed]

    if config.workers > 1 and len(variants) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            rows = list(executor.map(run_variant, variants))
    else:
        rows = [run_variant(v) for v in variants]
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def spanning_sweep(
    config: RunConfig,
    corpus: CorpusRepository | Sequence[FrameSequence] | str | Path,
    fractions: Sequence[float],
) -> pd.DataFrame:
    """Accuracy against the fraction of the observed past skipped by the spanning banks."""
    for fraction in fractions:
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"Spanning start fractions must lie in [0, 1], got {fraction}")
    table = ablate(config, corpus, "spanning_start_fraction", list(fractions))
    return pd.DataFrame({"fraction": [float(f) for f in fractions], "metric": table["metric"].tolist()})
