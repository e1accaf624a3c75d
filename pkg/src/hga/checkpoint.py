"""Binary named-tensor checkpoints.

Layout: 4-byte magic, little-endian uint32 version, little-endian uint64
manifest length, UTF-8 JSON manifest, then the raw float64 little-endian
tensor payloads concatenated in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"HGCP"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype=np.float64)).astype("<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    offset = 16 + mlen
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        data = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8")
        if data.size * 8 != nbytes:
            raise CheckpointError(f"{path}: truncated payload for tensor {entry['name']}")
        tensors[entry["name"]] = data.reshape(shape).astype(np.float64)
        offset += nbytes
    return tensors, manifest.get("meta", {})
