"""
Binary feature files and their segment sidecars.

Layout (little-endian): magic "TAGG", u32 version, u32 T, u32 D, f32 fps, u8 has_labels, u32 activity id
(0xFFFFFFFF when absent), then T×D f32 row-major features, then T u32 frame labels if has_labels.
The sidecar `<stem>.segments.txt` holds one "start_frame,end_frame,action_id" line per segment, end inclusive.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
import pandas as pd

from src.errors import FeatureFileError
from src.models import FrameSequence, Segment

logger = logging.getLogger("feature_file")

MAGIC = b"TAGG"
VERSION = 1
NO_ACTIVITY = 0xFFFFFFFF
HEADER = struct.Struct("<4sIIIfBI")
SUFFIX = ".tagg"
SIDECAR_SUFFIX = ".segments.txt"
SIDECAR_COLUMNS = ["start_frame", "end_frame", "action_id"]


def encode_sequence(seq: FrameSequence) -> bytes:
    has_labels = seq.frame_labels is not None
    activity = NO_ACTIVITY if seq.activity is None else seq.activity
    header = HEADER.pack(MAGIC, VERSION, seq.length, seq.dim, seq.fps, int(has_labels), activity)
    body = seq.features.astype("<f4").tobytes()
    if has_labels:
        body += seq.frame_labels.astype("<u4").tobytes()
    return header + body


def decode_sequence(data: bytes, name: str = "sequence", path: str | None = None) -> FrameSequence:
    if len(data) < HEADER.size:
        raise FeatureFileError(f"header needs {HEADER.size} bytes, file has {len(data)}", len(data), path)
    magic, version, length, dim, fps, has_labels, activity = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}", 0, path)
    if version != VERSION:
        raise FeatureFileError(f"unsupported version {version}", 4, path)
    if length == 0 or dim == 0:
        raise FeatureFileError(f"empty feature matrix {length}×{dim}", 8, path)
    if not np.isfinite(fps) or fps <= 0:
        raise FeatureFileError(f"invalid fps {fps}", 16, path)
    if has_labels not in (0, 1):
        raise FeatureFileError(f"invalid label flag {has_labels}", 20, path)

    offset = HEADER.size
    feature_bytes = length * dim * 4
    if len(data) < offset + feature_bytes:
        raise FeatureFileError(f"features truncated, expected {feature_bytes} bytes", len(data), path)
    features = np.frombuffer(data, dtype="<f4", count=length * dim, offset=offset).reshape(length, dim)
    if not np.all(np.isfinite(features)):
        bad = int(np.flatnonzero(~np.isfinite(features.reshape(-1)))[0])
        raise FeatureFileError("non-finite feature value", offset + 4 * bad, path)
    offset += feature_bytes

    labels = None
    if has_labels:
        if len(data) < offset + 4 * length:
            raise FeatureFileError(f"labels truncated, expected {4 * length} bytes", len(data), path)
        labels = np.frombuffer(data, dtype="<u4", count=length, offset=offset).astype(np.int64)
        offset += 4 * length
    if offset != len(data):
        raise FeatureFileError(f"{len(data) - offset} trailing bytes", offset, path)

    return FrameSequence(
        name=name,
        features=features.astype(np.float64),
        frame_labels=labels,
        activity=None if activity == NO_ACTIVITY else int(activity),
        fps=float(fps),
    )


def write_feature_file(path: str | Path, seq: FrameSequence) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_sequence(seq))
    if seq.segments:
        write_segments(sidecar_path(path), seq.segments)
    return path


def read_feature_file(path: str | Path) -> FrameSequence:
    """Read a feature file and, if present, its segment sidecar."""
    path = Path(path)
    name = path.name[: -len(SUFFIX)] if path.name.endswith(SUFFIX) else path.stem
    seq = decode_sequence(path.read_bytes(), name=name, path=str(path))
    sidecar = sidecar_path(path)
    if sidecar.exists():
        segments = read_segments(sidecar)
        if segments and segments[-1].end >= seq.length:
            raise ValueError(f"{sidecar}: segment end {segments[-1].end} beyond {seq.length} frames")
        seq.segments = segments
    return seq


def sidecar_path(path: Path) -> Path:
    name = path.name[: -len(SUFFIX)] if path.name.endswith(SUFFIX) else path.stem
    return path.with_name(name + SIDECAR_SUFFIX)


def write_segments(path: Path, segments: list[Segment]) -> None:
    frame = pd.DataFrame([[s.start, s.end, s.action] for s in segments], columns=SIDECAR_COLUMNS)
    frame.to_csv(path, header=False, index=False)


def read_segments(path: Path) -> list[Segment]:
    if path.stat().st_size == 0:
        return []
    frame = pd.read_csv(path, header=None, names=SIDECAR_COLUMNS, dtype="int64")
    segments = [
        Segment(start=int(r.start_frame), end=int(r.end_frame), action=int(r.action_id)) for r in frame.itertuples()
    ]
    logger.debug(f"Read {len(segments)} segments from {path}")
    return sorted(segments, key=lambda s: s.start)
