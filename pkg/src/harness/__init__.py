from src.harness.base_task import BaseTask, Sample
from src.harness.runner import ABLATION_AXES, Runner, TrainingResult, ablate, evaluate, spanning_sweep, train
from src.harness.tasks import DenseTask, NextActionTask, RecognitionTask, SegmentationTask, default_tasks

__all__ = [
    "ABLATION_AXES",
    "BaseTask",
    "DenseTask",
    "NextActionTask",
    "RecognitionTask",
    "Runner",
    "Sample",
    "SegmentationTask",
    "TrainingResult",
    "ablate",
    "default_tasks",
    "evaluate",
    "spanning_sweep",
    "train",
]
