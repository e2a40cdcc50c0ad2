#!/usr/bin/env python3
"""
Tests for CorpusRepository.
"""

import numpy as np
import pytest

from src.corpus_repository import CorpusRepository
from src.models import FrameSequence, InputMode
from src.rng import make_rng
from tests.fixture_corpus import get_labelled_sequence, get_random_sequence


def _repository(n=5):
    return CorpusRepository([get_random_sequence(length=12, seed=i) for i in range(n)])


def test_duplicate_names_are_ignored():
    repository = CorpusRepository()
    assert repository.add_sequence(get_random_sequence(seed=1))
    assert not repository.add_sequence(get_random_sequence(seed=1))
    assert repository.add_sequences([get_random_sequence(seed=1), get_random_sequence(seed=2)]) == 1
    assert repository.count == 2
    assert repository.exists("random_2")


def test_sequences_property_is_a_copy():
    repository = _repository(2)
    repository.sequences.clear()
    assert repository.count == 2
    repository.clear()
    assert repository.count == 0


def test_corpus_extents():
    repository = CorpusRepository([get_labelled_sequence(labels=[0, 4, 4]), get_random_sequence(dim=4, seed=1)])
    assert repository.n_actions == 5
    assert repository.n_activities == 2
    assert repository.dim == 4
    with pytest.raises(ValueError):
        _ = CorpusRepository([get_random_sequence(dim=3), get_random_sequence(dim=5, seed=1)]).dim


def test_split_sizes_and_determinism():
    repository = _repository(10)
    train, heldout = repository.split(0.3, make_rng(0, 2))
    assert (train.count, heldout.count) == (7, 3)
    names = {s.name for s in train.sequences} | {s.name for s in heldout.sequences}
    assert len(names) == 10
    again, _ = repository.split(0.3, make_rng(0, 2))
    assert [s.name for s in again.sequences] == [s.name for s in train.sequences]


def test_split_keeps_one_training_sequence():
    train, heldout = _repository(1).split(0.9, make_rng(0))
    assert (train.count, heldout.count) == (1, 0)
    with pytest.raises(ValueError):
        _repository(3).split(1.0, make_rng(0))
    with pytest.raises(ValueError):
        CorpusRepository().split(0.2, make_rng(0))


@pytest.mark.parametrize("mode, width", [(InputMode.FRAME_GT, 3), (InputMode.FRAME_GT_FEATURES, 7)])
def test_input_modes_build_one_hot_features(mode, width):
    seq = get_labelled_sequence(labels=[0, 2, 1])
    converted = CorpusRepository([seq]).with_input_mode(mode).sequences[0]
    assert converted.features.shape == (3, width)
    np.testing.assert_array_equal(converted.features[:, :3], np.eye(3)[[0, 2, 1]])
    np.testing.assert_array_equal(converted.frame_labels, seq.frame_labels)


def test_input_mode_uses_given_class_count_and_needs_labels():
    seq = get_labelled_sequence(labels=[0, 1])
    assert CorpusRepository([seq]).with_input_mode(InputMode.FRAME_GT, n_actions=5).dim == 5
    repository = CorpusRepository([FrameSequence(features=np.ones((3, 2)))])
    assert repository.with_input_mode(InputMode.FEATURES) is repository
    with pytest.raises(ValueError):
        repository.with_input_mode(InputMode.FRAME_GT)


def test_input_mode_rejects_labels_beyond_the_class_count():
    """Labels the one-hot encoding cannot hold raise ValueError instead of indexing past it."""
    seq = get_labelled_sequence(labels=[0, 1, 4])
    with pytest.raises(ValueError, match="one-hot"):
        CorpusRepository([seq]).with_input_mode(InputMode.FRAME_GT, n_actions=3)
    with pytest.raises(ValueError):
        CorpusRepository([seq]).with_input_mode(InputMode.FRAME_GT_FEATURES, n_actions=4)
    assert CorpusRepository([seq]).with_input_mode(InputMode.FRAME_GT, n_actions=5).dim == 5


def test_predicted_input_modes_encode_given_labels():
    """Features come from the predicted labels while the ground truth stays the target."""
    seq = get_labelled_sequence(labels=[0, 2, 1], dim=4)
    predicted = {seq.name: np.array([1, 1, 0])}
    only = CorpusRepository([seq]).with_input_mode(InputMode.PREDICTED_SEG, 3, predicted).sequences[0]
    np.testing.assert_array_equal(only.features, np.eye(3)[[1, 1, 0]])
    np.testing.assert_array_equal(only.frame_labels, [0, 2, 1])
    both = CorpusRepository([seq]).with_input_mode(InputMode.PREDICTED_SEG_FEATURES, 3, predicted).sequences[0]
    assert both.features.shape == (3, 7)
    np.testing.assert_array_equal(both.features[:, 3:], seq.features)


def test_predicted_input_modes_check_the_labels():
    seq = get_labelled_sequence(labels=[0, 2, 1])
    repository = CorpusRepository([seq])
    with pytest.raises(ValueError):
        repository.with_input_mode(InputMode.PREDICTED_SEG, 3)
    with pytest.raises(ValueError):
        repository.with_input_mode(InputMode.PREDICTED_SEG, 3, {"other": np.zeros(3, dtype=int)})
    with pytest.raises(ValueError):
        repository.with_input_mode(InputMode.PREDICTED_SEG, 3, {seq.name: np.zeros(2, dtype=int)})
    with pytest.raises(ValueError):
        repository.with_input_mode(InputMode.PREDICTED_SEG, 3, {seq.name: np.array([0, 3, 1])})


def test_save_and_load_directory(tmp_path):
    repository = _repository(3)
    paths = repository.save(tmp_path / "corpus")
    assert len(paths) == 3
    loaded = CorpusRepository.from_directory(tmp_path / "corpus")
    assert [s.name for s in loaded.sequences] == ["random_0", "random_1", "random_2"]
    for original, restored in zip(repository.sequences, loaded.sequences):
        np.testing.assert_allclose(restored.features, original.features, rtol=1e-6)
        assert restored.activity == original.activity
    with pytest.raises(FileNotFoundError):
        CorpusRepository.from_directory(tmp_path / "missing")


def test_to_dataframe():
    df = _repository(2).to_dataframe()
    assert df.columns.tolist() == ["name", "frames", "dim", "fps", "activity", "segments"]
    assert df["frames"].tolist() == [12, 12]
