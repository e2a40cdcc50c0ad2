#!/usr/bin/env python3
"""
Tests for the binary feature file codec and the segment sidecar.
"""

import struct

import numpy as np
import pytest

from src.errors import FeatureFileError
from src.feature_file import (
    HEADER,
    MAGIC,
    decode_sequence,
    encode_sequence,
    read_feature_file,
    read_segments,
    sidecar_path,
    write_feature_file,
    write_segments,
)
from src.models import FrameSequence, Segment
from tests.fixture_corpus import get_labelled_sequence


def test_header_layout():
    """25-byte little-endian header followed by f32 features and u32 labels."""
    seq = get_labelled_sequence(labels=[0, 1, 1], dim=2, fps=2.5)
    data = encode_sequence(seq)
    assert HEADER.size == 25
    assert data[:4] == MAGIC
    assert struct.unpack_from("<IIIfBI", data, 4) == (1, 3, 2, 2.5, 1, 0)
    assert len(data) == 25 + 3 * 2 * 4 + 3 * 4
    assert struct.unpack_from("<3I", data, 25 + 24) == (0, 1, 1)


def test_decode_restores_sequence_at_float32_precision():
    seq = get_labelled_sequence()
    decoded = decode_sequence(encode_sequence(seq), name=seq.name)
    np.testing.assert_array_equal(decoded.features, seq.features.astype(np.float32))
    np.testing.assert_array_equal(decoded.frame_labels, seq.frame_labels)
    assert decoded.activity == 0
    assert decoded.fps == seq.fps


def test_missing_labels_and_activity_use_sentinels():
    seq = FrameSequence(features=np.ones((4, 3)), fps=5.0)
    decoded = decode_sequence(encode_sequence(seq))
    assert decoded.frame_labels is None
    assert decoded.activity is None
    assert decoded.segments == []


def _encoded():
    return bytearray(encode_sequence(get_labelled_sequence(labels=[0, 1, 1, 2], dim=2)))


@pytest.mark.parametrize(
    "corrupt, offset",
    [
        (lambda d: d.__setitem__(slice(0, 4), b"XXXX"), 0),
        (lambda d: d.__setitem__(slice(4, 8), struct.pack("<I", 9)), 4),
        (lambda d: d.__setitem__(slice(8, 12), struct.pack("<I", 0)), 8),
        (lambda d: d.__setitem__(slice(16, 20), struct.pack("<f", -1.0)), 16),
        (lambda d: d.__setitem__(20, 7), 20),
    ],
)
def test_corrupt_headers_report_their_offset(corrupt, offset):
    data = _encoded()
    corrupt(data)
    with pytest.raises(FeatureFileError) as info:
        decode_sequence(bytes(data))
    assert info.value.offset == offset


def test_truncation_and_trailing_bytes():
    data = bytes(_encoded())
    with pytest.raises(FeatureFileError) as info:
        decode_sequence(data[:10])
    assert info.value.offset == 10
    with pytest.raises(FeatureFileError) as info:
        decode_sequence(data[:-1])
    assert info.value.offset == len(data) - 1
    with pytest.raises(FeatureFileError) as info:
        decode_sequence(data + b"\x00")
    assert info.value.offset == len(data)


def test_non_finite_feature_reports_its_offset():
    data = _encoded()
    data[25 + 12 : 25 + 16] = struct.pack("<f", float("inf"))
    with pytest.raises(FeatureFileError) as info:
        decode_sequence(bytes(data))
    assert info.value.offset == 25 + 12


def test_files_round_trip_with_sidecar(tmp_path):
    seq = get_labelled_sequence()
    path = write_feature_file(tmp_path / "clip.tagg", seq)
    assert sidecar_path(path).name == "clip.segments.txt"
    assert sidecar_path(path).read_text().splitlines()[0] == "0,2,0"
    loaded = read_feature_file(path)
    assert loaded.name == "clip"
    assert loaded.segments == seq.segments


def test_sidecar_overrides_label_segments(tmp_path):
    """Annotated segments win over the ones derived from frame labels."""
    seq = FrameSequence(features=np.ones((6, 2)), fps=1.0)
    path = write_feature_file(tmp_path / "clip.tagg", seq)
    write_segments(sidecar_path(path), [Segment(start=3, end=5, action=1), Segment(start=0, end=2, action=4)])
    loaded = read_feature_file(path)
    assert [(s.start, s.end, s.action) for s in loaded.segments] == [(0, 2, 4), (3, 5, 1)]


def test_sidecar_beyond_sequence_is_rejected(tmp_path):
    path = write_feature_file(tmp_path / "clip.tagg", FrameSequence(features=np.ones((3, 2))))
    write_segments(sidecar_path(path), [Segment(start=0, end=3, action=0)])
    with pytest.raises(ValueError):
        read_feature_file(path)


def test_empty_sidecar_reads_as_no_segments(tmp_path):
    path = tmp_path / "empty.segments.txt"
    path.write_text("")
    assert read_segments(path) == []
