"""Binary checkpoint container for model and adapter parameters.

Layout (little-endian): magic "SLCK", version u32, length-prefixed metadata
JSON, tensor count u32, then per tensor {name, rank, dims, float32 payload
row-major}, and a SHA-256 trailer over the concatenated payload bytes.
Parameters are float64 in memory and float32 on disk: load widens, save
narrows, and round-trip identity holds at the float32 representation.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint", "hash_arrays"]

CHECKPOINT_MAGIC = b"SLCK"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def hash_arrays(tensors: Mapping[str, np.ndarray]) -> str:
    """SHA-256 over the concatenated float32 payload bytes, in mapping order."""
    h = hashlib.sha256()
    for arr in tensors.values():
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    """Named parameter tensors plus creation metadata (seed, step count, config)."""

    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def param_hash(self) -> str:
        return hash_arrays(self.tensors)

    @property
    def version(self) -> int:
        return int(self.meta.get("format_version", CHECKPOINT_VERSION))

    def model_config(self):
        from .transducer import ModelConfig

        if "model" not in self.meta:
            raise CheckpointError("checkpoint carries no model config")
        return ModelConfig.from_dict(self.meta["model"])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = dict(ckpt.meta)
    meta["format_version"] = CHECKPOINT_VERSION
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload_hash = hashlib.sha256()
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    body += struct.pack("<I", len(meta_bytes))
    body += meta_bytes
    body += struct.pack("<I", len(ckpt.tensors))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if arr.ndim > 2:
            raise CheckpointError(f"tensor '{name}' has rank {arr.ndim} (max 2)")
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded))
        body += encoded
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        payload_hash.update(payload)
        body += payload
    body += payload_hash.digest()
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if len(raw) < 44 or bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        (meta_len,) = struct.unpack_from("<I", view, 8)
        offset = 12
        meta = json.loads(bytes(view[offset : offset + meta_len]).decode("utf-8"))
        offset += meta_len
        (count,) = struct.unpack_from("<I", view, offset)
        offset += 4
        tensors: dict[str, np.ndarray] = {}
        payload_hash = hashlib.sha256()
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", view, offset)
            offset += 4
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", view, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", view, offset)
            offset += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            end = offset + size * 4
            if end > len(raw) - 32:
                raise CheckpointError(f"{path}: truncated checkpoint file")
            payload = bytes(view[offset:end])
            payload_hash.update(payload)
            tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
            offset = end
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint file") from exc
    stored = bytes(view[offset : offset + 32])
    if offset + 32 != len(raw):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint file")
    if stored != payload_hash.digest():
        raise CheckpointError(f"{path}: parameter hash mismatch (corrupt payload)")
    return Checkpoint(tensors=tensors, meta=meta)
