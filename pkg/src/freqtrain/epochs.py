"""Columnar container for preprocessed 3x3000 sleep epochs, and its shard cache."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .shards import read_shard, write_shard

STAGES = ("W", "N1", "N2", "N3", "REM")
N_STAGES = len(STAGES)
UNLABELED = 255


@dataclass
class EpochRecord:
    signal: np.ndarray  # [3, 3000]
    stage: int | None
    subject_id: str
    recording_id: str
    index: int


@dataclass
class EpochSet:
    """Epochs stored column-wise; ``signals`` is float32 to keep memory bounded."""

    signals: np.ndarray  # [n, 3, 3000] float32
    stages: np.ndarray  # [n] int64, -1 when unlabeled
    subject_ids: np.ndarray  # [n] str
    recording_ids: np.ndarray  # [n] str
    indices: np.ndarray  # [n] int64
    groups: dict[str, str] | None = None  # subject -> group tag

    def __post_init__(self):
        n = len(self.signals)
        for name in ("stages", "subject_ids", "recording_ids", "indices"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"EpochSet column {name!r} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.signals)

    @classmethod
    def from_records(cls, records: Iterable[EpochRecord], groups: dict[str, str] | None = None) -> "EpochSet":
        records = list(records)
        if not records:
            return cls.empty(groups)
        return cls(
            np.stack([r.signal for r in records]).astype(np.float32),
            np.array([-1 if r.stage is None else r.stage for r in records], dtype=np.int64),
            np.array([r.subject_id for r in records]),
            np.array([r.recording_id for r in records]),
            np.array([r.index for r in records], dtype=np.int64),
            groups,
        )

    @classmethod
    def empty(cls, groups=None) -> "EpochSet":
        return cls(
            np.zeros((0, 3, 3000), np.float32),
            np.zeros(0, np.int64),
            np.zeros(0, dtype="<U1"),
            np.zeros(0, dtype="<U1"),
            np.zeros(0, np.int64),
            groups,
        )

    @classmethod
    def concatenate(cls, sets: Iterable["EpochSet"]) -> "EpochSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        groups: dict[str, str] = {}
        for s in sets:
            groups.update(s.groups or {})
        return cls(
            np.concatenate([s.signals for s in sets]),
            np.concatenate([s.stages for s in sets]),
            np.concatenate([s.subject_ids for s in sets]),
            np.concatenate([s.recording_ids for s in sets]),
            np.concatenate([s.indices for s in sets]),
            groups or None,
        )

    def take(self, idx) -> "EpochSet":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return EpochSet(
            self.signals[idx], self.stages[idx], self.subject_ids[idx], self.recording_ids[idx], self.indices[idx],
            self.groups,
        )

    def subjects(self) -> list[str]:
        return sorted(set(self.subject_ids.tolist()))

    def for_subjects(self, subjects: Iterable[str]) -> "EpochSet":
        return self.take(np.flatnonzero(np.isin(self.subject_ids, list(subjects))))

    def record(self, i: int) -> EpochRecord:
        stage = int(self.stages[i])
        return EpochRecord(
            self.signals[i], None if stage < 0 else stage, str(self.subject_ids[i]), str(self.recording_ids[i]),
            int(self.indices[i]),
        )


def write_epoch_cache(path: str | Path, epochs: EpochSet) -> None:
    labels = np.where(epochs.stages < 0, UNLABELED, epochs.stages).astype(np.uint8)
    header = {
        "kind": "epochs",
        "stages": list(STAGES),
        "subject_ids": epochs.subject_ids.tolist(),
        "recording_ids": epochs.recording_ids.tolist(),
        "indices": epochs.indices.tolist(),
        "groups": epochs.groups or {},
    }
    write_shard(path, epochs.signals, labels, header)


def read_epoch_cache(path: str | Path) -> EpochSet:
    signals, labels, header = read_shard(path)
    if header.get("kind") != "epochs":
        raise ValueError(f"{path} is not an epoch cache shard")
    stages = labels.astype(np.int64)
    stages[stages == UNLABELED] = -1
    return EpochSet(
        signals,
        stages,
        np.array(header["subject_ids"]),
        np.array(header["recording_ids"]),
        np.array(header["indices"], dtype=np.int64),
        header.get("groups") or None,
    )


def load_epoch_dir(directory: str | Path) -> EpochSet:
    paths = sorted(Path(directory).glob("*.shard"))
    if not paths:
        raise FileNotFoundError(f"no epoch shards in {directory}")
    return EpochSet.concatenate(read_epoch_cache(p) for p in paths)
