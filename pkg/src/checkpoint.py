"""
Checkpoint persistence.

Layout: magic b"TAGGCKPT", u32 format version, u32 header length, a canonical JSON header (sorted keys,
compact separators) and then the raw little-endian bytes of every tensor in header order. The header lists
each tensor as {"name", "shape", "dtype"}; names are prefixed "param/", "adam_m/" or "adam_v/".
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from src.autodiff import AdamState
from src.model import ACTIVATION, INIT_SCHEME, ModelParams
from src.models import ModelDims, RunConfig
from src.rng import make_rng, restore_rng, rng_state

logger = logging.getLogger("checkpoint")

CHECKPOINT_MAGIC = b"TAGGCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<II")
_SECTIONS = ("param", "adam_m", "adam_v")


@dataclass
class Checkpoint:
    config: RunConfig
    dims: ModelDims
    params: dict[str, np.ndarray]
    optimizer: dict[str, Any]
    moments: dict[str, dict[str, np.ndarray]] = field(default_factory=lambda: {"adam_m": {}, "adam_v": {}})
    rng: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_training(
        cls,
        config: RunConfig,
        model: ModelParams,
        optimizer: AdamState,
        rng: np.random.Generator,
        metadata: dict[str, Any] | None = None,
    ) -> Checkpoint:
        params = {name: p.data.copy() for name, p in model.parameters().items()}
        return cls(
            config=config,
            dims=model.dims,
            params=params,
            optimizer=optimizer.hyperparameters(),
            moments={
                "adam_m": {name: optimizer.m[name].copy() for name in params if name in optimizer.m},
                "adam_v": {name: optimizer.v[name].copy() for name in params if name in optimizer.v},
            },
            rng=rng_state(rng),
            metadata={
                "init": INIT_SCHEME,
                "activation": ACTIVATION,
                "n_actions": model.dims.n_actions,
                "n_activities": model.dims.n_activities,
                "input_mode": config.input_mode.value,
                "task": config.task.value,
                **(metadata or {}),
            },
        )

    def build_model(self) -> ModelParams:
        model = ModelParams.init(self.config.model, self.dims, make_rng(0))
        model.load_arrays(self.params)
        return model

    def optimizer_state(self) -> AdamState:
        return AdamState.from_hyperparameters(
            self.optimizer,
            m={k: v.copy() for k, v in self.moments["adam_m"].items()},
            v={k: v.copy() for k, v in self.moments["adam_v"].items()},
        )

    def restore_rng(self) -> np.random.Generator:
        return restore_rng(self.rng)

    def _tensors(self) -> list[tuple[str, np.ndarray]]:
        tensors = [(f"param/{name}", array) for name, array in self.params.items()]
        for section in ("adam_m", "adam_v"):
            tensors.extend((f"{section}/{name}", array) for name, array in self.moments[section].items())
        return tensors

    def to_bytes(self) -> bytes:
        tensors = self._tensors()
        header = {
            "format_version": FORMAT_VERSION,
            "config": self.config.model_dump(mode="json"),
            "dims": self.dims.model_dump(mode="json"),
            "optimizer": self.optimizer,
            "rng": self.rng,
            "metadata": self.metadata,
            "tensors": [
                {"name": name, "shape": list(array.shape), "dtype": array.dtype.newbyteorder("<").str}
                for name, array in tensors
            ],
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        blobs = b"".join(array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes() for _, array in tensors)
        return CHECKPOINT_MAGIC + _PREFIX.pack(FORMAT_VERSION, len(header_bytes)) + header_bytes + blobs

    @classmethod
    def from_bytes(cls, data: bytes) -> Checkpoint:
        if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise ValueError("Not a checkpoint: bad magic")
        offset = len(CHECKPOINT_MAGIC)
        version, header_length = _PREFIX.unpack_from(data, offset)
        if version != FORMAT_VERSION:
            raise ValueError(f"Unsupported checkpoint version {version}")
        offset += _PREFIX.size
        header = json.loads(data[offset : offset + header_length].decode("utf-8"))
        offset += header_length

        sections: dict[str, dict[str, np.ndarray]] = {s: {} for s in _SECTIONS}
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            array = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(entry["shape"]).copy()
            offset += count * dtype.itemsize
            section, name = entry["name"].split("/", 1)
            sections[section][name] = array.astype(dtype.newbyteorder("="))
        if offset != len(data):
            raise ValueError(f"Checkpoint has {len(data) - offset} trailing bytes")

        return cls(
            config=RunConfig.model_validate(header["config"]),
            dims=ModelDims.model_validate(header["dims"]),
            params=sections["param"],
            optimizer=header["optimizer"],
            moments={"adam_m": sections["adam_m"], "adam_v": sections["adam_v"]},
            rng=header["rng"],
            metadata=header["metadata"],
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        logger.info(f"Checkpoint saved to {path} ({self.digest()[:12]})")
        return path

    @classmethod
    def load(cls, path: str | Path) -> Checkpoint:
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        """SHA-256 of the canonical bytes."""
        return hashlib.sha256(self.to_bytes()).hexdigest()
