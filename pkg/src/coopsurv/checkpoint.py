"""Versioned binary checkpoint container.

Layout: 4-byte magic, uint32 format version, uint64 manifest length, JSON
manifest (meta dict plus array names/shapes in data order), then the raw
little-endian float64 array payloads concatenated. Round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .exceptions import CheckpointError

_MAGIC = b"CSRV"
_VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    manifest = {
        "meta": meta,
        "arrays": [{"name": name, "shape": list(arr.shape)}
                   for name, arr in arrays.items()],
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (manifest_len,) = struct.unpack_from("<Q", raw, 8)
    body = 16 + manifest_len
    if len(raw) < body:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:body].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed manifest: {exc}") from exc
    arrays: dict[str, np.ndarray] = {}
    offset = body
    for entry in manifest.get("arrays", []):
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated array payload for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, manifest.get("meta", {})
