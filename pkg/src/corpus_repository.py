import logging
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from src.feature_file import SUFFIX, read_feature_file, write_feature_file
from src.models import FrameSequence, InputMode


class CorpusRepository:
    @classmethod
    def from_directory(cls, directory: str | Path) -> "CorpusRepository":
        """Load every feature file in a directory (sorted by name), with sidecars where present."""
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"Corpus directory not found: {directory}")
        sequences = [read_feature_file(path) for path in sorted(directory.glob(f"*{SUFFIX}"))]
        repository = cls(sequences)
        repository.logger.info(f"Loaded {repository.count} sequences from {directory}")
        return repository

    def __init__(self, sequences: list[FrameSequence] | None = None):
        self.logger = logging.getLogger("corpus_repository")
        self._sequences: list[FrameSequence] = []

        if sequences:
            self.add_sequences(sequences)

    @property
    def sequences(self) -> list[FrameSequence]:
        """Get all sequences (read-only access)."""
        return self._sequences.copy()

    @property
    def count(self) -> int:
        return len(self._sequences)

    @property
    def n_actions(self) -> int:
        """One more than the largest action id in labels or segments."""
        largest = -1
        for seq in self._sequences:
            if seq.frame_labels is not None:
                largest = max(largest, int(seq.frame_labels.max()))
            largest = max([largest, *(s.action for s in seq.segments)])
        return largest + 1

    @property
    def n_activities(self) -> int:
        activities = [seq.activity for seq in self._sequences if seq.activity is not None]
        return max(activities) + 1 if activities else 0

    @property
    def dim(self) -> int:
        dims = {seq.dim for seq in self._sequences}
        if len(dims) != 1:
            raise ValueError(f"Sequences disagree on feature dimension: {sorted(dims)}")
        return dims.pop()

    def add_sequence(self, seq: FrameSequence) -> bool:
        """Add a sequence. Returns True if added, False if a sequence of that name exists."""
        if not self.exists(seq.name):
            self._sequences.append(seq)
            self.logger.debug(f"Sequence added: {seq.name}")
            return True
        else:
            self.logger.debug(f"Duplicate sequence ignored: {seq.name}")
            return False

    def exists(self, name: str) -> bool:
        return any(seq.name == name for seq in self._sequences)

    def add_sequences(self, sequences: list[FrameSequence]) -> int:
        """Add multiple sequences. Returns count of sequences actually added."""
        return sum(1 for seq in sequences if self.add_sequence(seq))

    def clear(self) -> None:
        self._sequences.clear()
        self.logger.debug("All sequences cleared from repository")

    def save(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [write_feature_file(directory / f"{seq.name}{SUFFIX}", seq) for seq in self._sequences]
        self.logger.info(f"Wrote {len(paths)} sequences to {directory}")
        return paths

    def split(self, fraction: float, rng: np.random.Generator) -> tuple["CorpusRepository", "CorpusRepository"]:
        """Random (train, held-out) split; the held-out part gets round(fraction × count) sequences."""
        if not 0.0 <= fraction < 1.0:
            raise ValueError(f"Held-out fraction must lie in [0, 1), got {fraction}")
        if self.count == 0:
            raise ValueError("Cannot split an empty corpus")
        order = rng.permutation(self.count)
        n_heldout = min(int(round(fraction * self.count)), self.count - 1)
        heldout = sorted(order[:n_heldout].tolist())
        train = sorted(order[n_heldout:].tolist())
        return (
            CorpusRepository([self._sequences[i] for i in train]),
            CorpusRepository([self._sequences[i] for i in heldout]),
        )

    def with_input_mode(
        self,
        mode: InputMode,
        n_actions: int | None = None,
        predicted_labels: Mapping[str, np.ndarray] | None = None,
    ) -> "CorpusRepository":
        """Replace or extend features with one-hot frame labels.

        The frame_gt modes encode the ground-truth labels; the predicted_seg modes encode
        `predicted_labels[seq.name]`. Targets always stay the ground truth.
        """
        if mode is InputMode.FEATURES:
            return self
        n_actions = n_actions or self.n_actions
        converted = []
        for seq in self._sequences:
            if mode.predicted:
                if predicted_labels is None or seq.name not in predicted_labels:
                    raise ValueError(f"Input mode {mode.value} needs predicted labels for {seq.name}")
                labels = np.asarray(predicted_labels[seq.name], dtype=np.int64)
                if labels.shape != (seq.length,):
                    raise ValueError(f"Predicted labels of {seq.name} have shape {labels.shape}, not ({seq.length},)")
            elif seq.frame_labels is None:
                raise ValueError(f"Input mode {mode.value} needs frame labels, {seq.name} has none")
            else:
                labels = seq.frame_labels
            if labels.size and (labels.min() < 0 or labels.max() >= n_actions):
                raise ValueError(
                    f"{seq.name} has action ids up to {int(labels.max())}, outside the {n_actions} one-hot classes"
                )
            one_hot = np.eye(n_actions)[labels]
            features = np.concatenate([one_hot, seq.features], axis=1) if mode.keeps_features else one_hot
            converted.append(seq.with_features(features))
        self.logger.debug(f"Converted {len(converted)} sequences to input mode {mode.value}")
        return CorpusRepository(converted)

    def to_dataframe(self) -> pd.DataFrame:
        """One summary row per sequence."""
        return pd.DataFrame(
            columns=["name", "frames", "dim", "fps", "activity", "segments"],
            data=[
                [seq.name, seq.length, seq.dim, seq.fps, seq.activity, len(seq.segments)]
                for seq in self._sequences
            ],
        )
