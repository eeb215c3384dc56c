"""Versioned binary checkpoint: named little-endian tensors plus a JSON header.

Layout::

    b"LOCNAVCK" | u32 version | u64 header length | header (UTF-8 JSON) | tensor bytes

The header holds the architecture descriptors, the seed, free-form metadata
and an index of (name, dtype, shape, offset, nbytes) for every tensor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LOCNAVCK"
VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8", "uint8": "|u1"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    architecture: dict
    seed: int
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    index, blobs, offset = [], [], 0
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name])
        key = arr.dtype.name
        if key not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {key}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[key]).tobytes()
        index.append({"name": name, "dtype": key, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"architecture": ckpt.architecture, "seed": int(ckpt.seed),
                         "meta": ckpt.meta, "tensors": index}, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    start = 8 + 12
    header = json.loads(data[start:start + hlen].decode())
    body = start + hlen
    tensors = {}
    for t in header["tensors"]:
        lo = body + t["offset"]
        raw = data[lo:lo + t["nbytes"]]
        if len(raw) != t["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {t['name']}")
        arr = np.frombuffer(raw, dtype=_DTYPES[t["dtype"]]).reshape(t["shape"])
        tensors[t["name"]] = arr.astype(t["dtype"])
    return Checkpoint(tensors, header["architecture"], header["seed"], header.get("meta", {}))
