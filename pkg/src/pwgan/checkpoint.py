"""``PWGCKPT1`` container: JSON manifest plus raw little-endian float64 payload.

Layout::

    b"PWGCKPT1"                 8-byte magic
    uint64 little-endian        manifest length in bytes
    manifest (UTF-8 JSON)       {"tensors": [[name, shape, offset], ...], "meta": {...}}
    payload                     concatenated <f8 arrays; offsets in bytes from payload start
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PWGCKPT1"


class CheckpointError(ValueError):
    pass


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append([name, list(arr.shape), offset])
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a PWGCKPT1 checkpoint")
    try:
        (length,) = struct.unpack("<Q", raw[8:16])
        manifest = json.loads(raw[16:16 + length].decode())
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    payload = memoryview(raw)[16 + length:]
    tensors = {}
    for name, shape, offset in manifest["tensors"]:
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * count > len(payload):
            raise CheckpointError(f"{path}: payload truncated at tensor {name}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return tensors, manifest["meta"]
