"""Flat binary parameter container.

Layout::

    b"VDXCKPT1"                      8 bytes magic
    uint64 little-endian             manifest length in bytes
    manifest                         UTF-8 JSON: {"config": {...}, "tensors": [...]}
    payload                          raw little-endian arrays, concatenated

Each tensor entry records ``name``, ``shape``, ``dtype`` and ``offset`` (bytes
from the start of the payload).
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"VDXCKPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, arrays: Mapping[str, np.ndarray],
                    config: Mapping[str, Any] | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        blob = arr.astype(dt, copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dt.str, "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"config": dict(config or {}), "tensors": entries}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header at byte {len(raw)}")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16:16 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest at byte 16") from exc
    base = 16 + mlen
    arrays = {}
    for e in manifest["tensors"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        end = start + count * dt.itemsize
        if end > len(raw):
            raise CheckpointError(f"{path}: tensor {e['name']!r} truncated at byte {len(raw)}")
        arrays[e["name"]] = np.frombuffer(raw[start:end], dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
    return arrays, manifest["config"]
