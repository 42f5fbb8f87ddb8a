"""Single-file named-tensor checkpoints.

Layout::

    [8 bytes]  little-endian uint64: manifest length in bytes
    [manifest] UTF-8 JSON {"format", "version", "config", "meta", "tensors": [...]}
    [blobs]    raw little-endian float32 data, concatenated

Each ``tensors`` entry is ``{"name", "shape", "offset", "nbytes"}`` with the
offset counted from the start of the blob section.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "cdnpg-checkpoint"
VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | os.PathLike,
    tensors: Mapping[str, np.ndarray],
    config: Mapping | None = None,
    meta: Mapping | None = None,
) -> Path:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value), dtype=_LE_F32)
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": dict(config or {}),
        "meta": dict(meta or {}),
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)
    return path


def read_manifest(path: str | os.PathLike) -> dict:
    with open(path, "rb") as fh:
        return _read_head(fh, path)[0]


def _read_head(fh, path):
    prefix = fh.read(8)
    if len(prefix) != 8:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    (size,) = struct.unpack("<Q", prefix)
    if size > os.fstat(fh.fileno()).st_size - 8:
        raise CheckpointError(f"{path}: manifest length {size} exceeds file size")
    raw = fh.read(size)
    if len(raw) != size:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: manifest is not valid JSON ({exc})") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    return manifest, 8 + size


def load_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(manifest, {name: float32 array})``."""
    with open(path, "rb") as fh:
        manifest, start = _read_head(fh, path)
        blob = fh.read()
    tensors = {}
    for entry in manifest["tensors"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(blob):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} extends past end of file")
        arr = np.frombuffer(blob, dtype=_LE_F32, count=n // 4, offset=lo)
        expected = int(np.prod(entry["shape"], dtype=np.int64))
        if arr.size != expected:
            raise CheckpointError(f"{path}: tensor {entry['name']!r} has {arr.size} values, shape says {expected}")
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return manifest, tensors
