"""
Run configuration loading.

A config file holds `key=value` lines (`#` starts a comment). Dotted keys address nested sections
(`snippet.recent_starts=10,20,30`, `optimizer.lr=1e-4`); comma-separated values become lists, and
`a:b` items become (a, b) pairs. Command-line overrides use the same keys and win over the file.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Mapping

from dotenv import dotenv_values
from pydantic import ValidationError

from src.errors import ConfigurationError
from src.models import RunConfig

logger = logging.getLogger("config")

LIST_KEYS = {
    "snippet.recent_starts",
    "snippet.spanning_scales",
    "snippet.recent_ranges",
    "obs_fractions",
    "pred_fractions",
}
PAIR_KEYS = {"snippet.spanning_range"}


def parse_value(key: str, raw: str | None) -> Any:
    if raw is None or raw == "":
        return None
    if key in LIST_KEYS:
        return [_parse_item(item) for item in raw.split(",") if item.strip()]
    if key in PAIR_KEYS:
        return _parse_item(raw)
    return raw.strip()


def _parse_item(item: str) -> Any:
    item = item.strip()
    if ":" in item:
        return tuple(part.strip() for part in item.split(":", 1))
    return item


def nest(flat: Mapping[str, Any]) -> dict[str, Any]:
    """{"a.b": 1} -> {"a": {"b": 1}}."""
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        if value is None:
            continue
        node = nested
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"Config key {key} conflicts with a scalar value")
        node[leaf] = value
    return nested


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    return {key: parse_value(key, raw) for key, raw in dotenv_values(path).items()}


def load_run_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Merge file values, process settings and overrides into a validated `RunConfig`."""
    flat: dict[str, Any] = {}
    if path is not None:
        flat.update(read_config_file(path))
    if os.getenv("TAGG_WORKERS") and "workers" not in flat:
        flat["workers"] = os.getenv("TAGG_WORKERS")
    for key, value in (overrides or {}).items():
        if value is not None:
            flat[key] = parse_value(key, value) if isinstance(value, str) else value
    try:
        config = RunConfig.model_validate(nest(flat))
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e
    logger.debug(f"Run configuration: {config.model_dump(mode='json')}")
    return config
