"""Training-pool reduction, sample duplication and 11-epoch sequence assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..epochs import N_STAGES, EpochRecord, EpochSet

PLACEHOLDER = -1


@dataclass
class SequenceSample:
    """``epochs[j]`` is ``None`` for zero-signal padding outside the recording."""

    epochs: list[EpochRecord | None]
    target: int

    @property
    def placeholder_mask(self) -> list[bool]:
        return [e is None for e in self.epochs]

    def signals(self) -> np.ndarray:
        ref = next(e for e in self.epochs if e is not None).signal
        return np.stack([np.zeros_like(ref) if e is None else e.signal for e in self.epochs])


def assemble_sequences(records: list[EpochRecord], seq_len: int = 11) -> list[SequenceSample]:
    """One sequence per labelled epoch of a single recording (records ordered by index)."""
    half = seq_len // 2
    out = []
    for i, centre in enumerate(records):
        if centre.stage is None:
            continue
        window = [records[j] if 0 <= j < len(records) else None for j in range(i - half, i + half + 1)]
        out.append(SequenceSample(window, centre.stage))
    return out


def sequence_windows(epochs: EpochSet, seq_len: int = 11) -> tuple[np.ndarray, np.ndarray]:
    """Row ``r`` lists the epoch-set rows forming the sequence centred on labelled epoch ``r``.

    Returns ``[n_sequences, seq_len]`` with :data:`PLACEHOLDER` outside a
    recording, plus (as second value) the row of each centre epoch.
    Windows never cross recording boundaries.
    """
    half = seq_len // 2
    windows = []
    centres = []
    order = np.lexsort((epochs.indices, epochs.recording_ids))
    rec_sorted = epochs.recording_ids[order]
    boundaries = np.flatnonzero(rec_sorted[1:] != rec_sorted[:-1]) + 1
    for rows in np.split(order, boundaries):
        n = len(rows)
        if n == 0:
            continue
        padded = np.concatenate([np.full(half, PLACEHOLDER), rows, np.full(half, PLACEHOLDER)])
        for i in range(n):
            if epochs.stages[rows[i]] < 0:
                continue
            windows.append(padded[i : i + seq_len])
            centres.append(rows[i])
    if not windows:
        return np.zeros((0, seq_len), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.stack(windows).astype(np.int64), np.array(centres, dtype=np.int64)


def subsample_training_data(
    epochs: EpochSet,
    n_subjects: int | None,
    n_samples: int | None,
    rng: np.random.Generator,
    max_redraws: int = 10_000,
) -> tuple[list[str], np.ndarray]:
    """Choose subjects, then labelled centre epochs among them.

    Returns the chosen subjects and the selected epoch-set rows. Samples
    are drawn uniformly without class stratification and redrawn until
    every stage occurs. ``None`` means "all".
    """
    subjects = epochs.subjects()
    if n_subjects is not None:
        if n_subjects > len(subjects):
            raise ValueError(f"requested {n_subjects} subjects, pool has {len(subjects)}")
        subjects = sorted(rng.choice(subjects, size=n_subjects, replace=False).tolist())
    rows = np.flatnonzero(np.isin(epochs.subject_ids, subjects) & (epochs.stages >= 0))
    if n_samples is None:
        return subjects, rows
    if n_samples > len(rows):
        raise ValueError(f"requested {n_samples} samples, chosen subjects have {len(rows)}")
    present = set(epochs.stages[rows].tolist())
    if len(present) < N_STAGES:
        raise ValueError(f"chosen subjects cover only stages {sorted(present)}; cannot represent all {N_STAGES}")
    for _ in range(max_redraws):
        pick = np.sort(rng.choice(rows, size=n_samples, replace=False))
        if len(set(epochs.stages[pick].tolist())) == N_STAGES:
            return subjects, pick
    raise ValueError(f"no draw of {n_samples} samples covered all stages after {max_redraws} attempts")


def duplicate_for_constant_updates(n_reduced: int, n_full: int) -> int:
    """How often each reduced sample repeats per epoch: ``floor(n_full / n_reduced)``."""
    if n_reduced < 1:
        raise ValueError("reduced pool must hold at least one sample")
    return max(1, n_full // n_reduced)
