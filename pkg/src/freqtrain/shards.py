"""Binary shard files shared by synthetic exports and the epoch cache.

Layout: 8-byte little-endian length ``n``, ``n`` bytes of JSON header,
``count * prod(shape)`` little-endian float32 signal values, then one
unsigned byte per label entry (``count * prod(label_shape)`` bytes).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

_LEN = struct.Struct("<Q")


class ShardError(ValueError):
    pass


def write_shard(path: str | Path, signals: np.ndarray, labels: np.ndarray, header: dict) -> None:
    signals = np.ascontiguousarray(signals, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.shape[0] != signals.shape[0]:
        raise ShardError("signals and labels disagree on sample count")
    header = dict(header)
    header.update(count=int(signals.shape[0]), shape=list(signals.shape[1:]), label_shape=list(labels.shape[1:]))
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_LEN.pack(len(head)))
        fh.write(head)
        fh.write(signals.tobytes())
        fh.write(labels.tobytes())
    os.replace(tmp, path)


def read_shard(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _LEN.size:
        raise ShardError(f"{path}: too short")
    (n,) = _LEN.unpack_from(raw, 0)
    header = json.loads(raw[_LEN.size : _LEN.size + n])
    count = header["count"]
    shape = tuple(header["shape"])
    label_shape = tuple(header.get("label_shape", ()))
    n_sig = count * int(np.prod(shape))
    n_lab = count * int(np.prod(label_shape)) if label_shape else count
    offset = _LEN.size + n
    expected = offset + 4 * n_sig + n_lab
    if len(raw) != expected:
        raise ShardError(f"{path}: expected {expected} bytes, found {len(raw)}")
    signals = np.frombuffer(raw, dtype="<f4", count=n_sig, offset=offset).reshape((count, *shape))
    labels = np.frombuffer(raw, dtype=np.uint8, count=n_lab, offset=offset + 4 * n_sig).reshape((count, *label_shape))
    return signals.copy(), labels.copy(), header
