"""Single-file parameter checkpoints.

Layout: 8-byte little-endian unsigned length ``n``, ``n`` bytes of UTF-8
JSON manifest, then every array as raw little-endian float64 values,
concatenated in manifest order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | os.PathLike,
    arrays: Mapping[str, np.ndarray],
    components: Mapping[str, str] | None = None,
    meta: Mapping[str, Any] | None = None,
) -> None:
    """Write ``arrays`` atomically; ``components`` maps a name to f / c_p / c_f."""
    entries = []
    for name, arr in arrays.items():
        entry = {"name": name, "shape": list(np.shape(arr)), "dtype": "<f8"}
        if components is not None:
            entry["component"] = components[name]
        entries.append(entry)
    manifest = {"format_version": FORMAT_VERSION, "params": entries, "meta": dict(meta or {})}
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_LEN.pack(len(head)))
        fh.write(head)
        for name in arrays:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(arrays, manifest)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _LEN.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint")
    (n,) = _LEN.unpack_from(raw, 0)
    try:
        manifest = json.loads(raw[_LEN.size : _LEN.size + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')}")
    offset = _LEN.size + n
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated at parameter {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, manifest
