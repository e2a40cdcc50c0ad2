"""
Snippet pooling and the recent/spanning feature banks.

A snippet is a contiguous block of frames reduced to one feature vector. Banks are returned as D×K
matrices, one column per snippet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.models import FrameSequence, Pooling, SnippetConfig


@dataclass(frozen=True)
class SnippetBank:
    recent: list[np.ndarray]
    spanning: list[np.ndarray]
    pooling: Pooling


def snippet_bounds(i: int, j: int, k: int) -> list[tuple[int, int]]:
    """Inclusive frame bounds of the `k` near-equal parts of [i, j]."""
    if j < i:
        raise ValueError(f"Snippet range end {j} precedes start {i}")
    if k < 1:
        raise ValueError(f"Snippet count must be at least 1, got {k}")
    length = j - i + 1
    bounds = []
    for part in range(k):
        start = i + (part * length) // k
        end = i + ((part + 1) * length) // k - 1
        if end < start:
            # Fewer frames than parts: repeat the nearest frame.
            start = end = min(start, j)
        bounds.append((start, end))
    return bounds


def pool_snippets(
    features: np.ndarray | FrameSequence, i: int, j: int, k: int, pooling: Pooling = Pooling.MAX
) -> np.ndarray:
    """Pool frames i..j (inclusive) into `k` snippet columns, giving a D×K matrix."""
    pooling = Pooling(pooling)
    frames = features.features if isinstance(features, FrameSequence) else np.asarray(features)
    if not 0 <= i <= j < frames.shape[0]:
        raise ValueError(f"Snippet range [{i}, {j}] outside sequence of {frames.shape[0]} frames")
    columns = []
    for start, end in snippet_bounds(i, j, k):
        part = frames[start : end + 1]
        if pooling is Pooling.MAX:
            columns.append(part.max(axis=0))
        elif pooling is Pooling.MEAN:
            columns.append(part.mean(axis=0))
        else:
            columns.append(frames[(start + end) // 2])
    return np.stack(columns, axis=1)


def seconds_to_frame(seconds: float, fps: float, length: int) -> int:
    return min(max(int(round(seconds * fps)), 0), length - 1)


def build_recent_bank(seq: FrameSequence, t: int, cfg: SnippetConfig) -> list[np.ndarray]:
    """One D×K_R matrix per recent start, each ending at frame t."""
    _check_cut(seq, t)
    if cfg.recent_ranges:
        return [_pool_range(seq, a, b, cfg.recent_k, cfg.pooling) for a, b in cfg.recent_ranges]
    bank = []
    for offset in cfg.recent_starts:
        start = max(0, t - int(round(offset * seq.fps)))
        bank.append(pool_snippets(seq, start, t, cfg.recent_k, cfg.pooling))
    return bank


def build_spanning_bank(seq: FrameSequence, t: int, cfg: SnippetConfig) -> list[np.ndarray]:
    """One D×K matrix per spanning scale, all over the same stretch of the observed past."""
    _check_cut(seq, t)
    if cfg.spanning_range:
        a, b = cfg.spanning_range
        return [_pool_range(seq, a, b, k, cfg.pooling) for k in cfg.spanning_scales]
    start = min(int(math.floor(cfg.spanning_start_fraction * t)), t)
    return [pool_snippets(seq, start, t, k, cfg.pooling) for k in cfg.spanning_scales]


def build_banks(seq: FrameSequence, t: int, cfg: SnippetConfig) -> SnippetBank:
    bank = SnippetBank(
        recent=build_recent_bank(seq, t, cfg),
        spanning=build_spanning_bank(seq, t, cfg),
        pooling=cfg.pooling,
    )
    if not all(np.all(np.isfinite(m)) for m in [*bank.recent, *bank.spanning]):
        raise ValueError(f"Non-finite features in banks of {seq.name} at frame {t}")
    return bank


def _pool_range(seq: FrameSequence, start_s: float, end_s: float, k: int, pooling: Pooling) -> np.ndarray:
    start = seconds_to_frame(start_s, seq.fps, seq.length)
    end = max(seconds_to_frame(end_s, seq.fps, seq.length), start)
    return pool_snippets(seq, start, end, k, pooling)


def _check_cut(seq: FrameSequence, t: int) -> None:
    if not 1 <= t < seq.length:
        raise ValueError(f"Observation cut {t} outside [1, {seq.length - 1}] for {seq.name}")
