"""
Seeded random streams.

Every stochastic component (initialisation, dropout, sampling, corpus generation) draws from a
`numpy.random.Generator` backed by the counter-based Philox bit generator. Streams are addressed by
`(seed, *stream)` so that independent consumers never share state.
"""

from typing import Any

import numpy as np

# Stream identifiers used by the training harness.
INIT_STREAM = 1
SPLIT_STREAM = 2
TRAIN_STREAM = 3
EVAL_STREAM = 4

_UINT64_FIELDS = ("counter", "key", "buffer")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Create a Philox-backed generator for the given seed and stream path."""
    if seed < 0 or any(s < 0 for s in stream):
        raise ValueError(f"Seeds and stream ids must be non-negative, got {seed} / {stream}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def rng_state(rng: np.random.Generator) -> dict[str, Any]:
    """Return the generator state as plain JSON-compatible values."""
    return _to_plain(rng.bit_generator.state)


def restore_rng(state: dict[str, Any]) -> np.random.Generator:
    """Rebuild a generator from a state produced by `rng_state`."""
    if state.get("bit_generator") != "Philox":
        raise ValueError(f"Unsupported bit generator: {state.get('bit_generator')}")
    bit_generator = np.random.Philox()
    bit_generator.state = _from_plain(state)
    return np.random.Generator(bit_generator)


def _to_plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [int(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    return value


def _from_plain(value: Any, key: str | None = None) -> Any:
    if isinstance(value, dict):
        return {k: _from_plain(v, k) for k, v in value.items()}
    if key in _UINT64_FIELDS and isinstance(value, list):
        return np.array(value, dtype=np.uint64)
    return value
