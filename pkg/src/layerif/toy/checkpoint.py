"""Versioned binary checkpoint for :class:`ToyTransformer`.

File layout::

    b"LAYERIFM"                   8-byte magic
    uint32 LE                     format version (1)
    uint32 LE                     header length in bytes
    header                        UTF-8 JSON: config, tensor index, metadata
    payload                       raw little-endian float32 tensors, row-major,
                                  in header order
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .model import ToyConfig, ToyTransformer

MAGIC = b"LAYERIFM"
CHECKPOINT_VERSION = 1
_DISK_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model: ToyTransformer, metadata: Optional[dict] = None) -> bytes:
    names = sorted(model.params)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "dtype": "f32",
        "endianness": "little",
        "config": model.config.to_dict(),
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(model.params[n].astype(_DISK_DTYPE).tobytes() for n in names)
    return MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(head)) + head + payload


def save_checkpoint(model: ToyTransformer, path, metadata: Optional[dict] = None) -> str:
    """Write the checkpoint; returns its SHA-256."""
    blob = checkpoint_bytes(model, metadata)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path) -> Tuple[ToyTransformer, dict]:
    """Load a checkpoint. Returns the model (float64 params) and the header metadata."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a toy-model checkpoint")
    version, head_len = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16 : 16 + head_len].decode("utf-8"))
    if header.get("dtype") != "f32" or header.get("endianness") != "little":
        raise CheckpointError(f"{path}: unsupported tensor encoding")
    offset = 16 + head_len
    params = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * _DISK_DTYPE.itemsize
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        params[entry["name"]] = np.frombuffer(chunk, dtype=_DISK_DTYPE).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    model = ToyTransformer(ToyConfig(**header["config"]), params)
    if set(params) != set(ToyTransformer(model.config).params):
        raise CheckpointError(f"{path}: tensor set does not match the architecture")
    return model, header.get("metadata", {})
