"""Subject-wise cross-validation splits with per-fold validation subjects."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np


@dataclass
class CvSplit:
    folds: list[list[str]]  # subjects per fold
    validation: list[list[str]]  # validation subset of each fold
    seed: int = 0

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def fold_of(self, subject: str) -> int:
        for i, members in enumerate(self.folds):
            if subject in members:
                return i
        raise KeyError(subject)

    def partition(self, test_fold: int) -> dict[str, list[str]]:
        """Subjects for training, validation (early stopping) and testing.

        The test fold's own validation subjects are returned as
        ``withheld`` and must not be used at all.
        """
        train, val = [], []
        for i, members in enumerate(self.folds):
            if i == test_fold:
                continue
            val.extend(self.validation[i])
            train.extend(s for s in members if s not in self.validation[i])
        test = [s for s in self.folds[test_fold] if s not in self.validation[test_fold]]
        return {"train": train, "validation": val, "test": test, "withheld": list(self.validation[test_fold])}

    def to_dict(self) -> dict:
        return {"seed": self.seed, "folds": self.folds, "validation": self.validation}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "CvSplit":
        d = json.loads(Path(path).read_text())
        return cls(d["folds"], d["validation"], d.get("seed", 0))


def make_cv_splits(
    subject_groups: Mapping[str, str],
    n_folds: int = 5,
    seed: int = 0,
    val_fraction: float = 0.1,
) -> CvSplit:
    """Partition subjects into folds, balancing each group tag across folds.

    Subjects of every group are shuffled and dealt round-robin, continuing
    where the previous group stopped, so per-fold group counts differ by at
    most one. Each fold then reserves ``max(1, round(val_fraction * size))``
    subjects as validation, drawn alternately from its groups.
    """
    subjects = sorted(subject_groups)
    if len(subjects) < n_folds:
        raise ValueError(f"need at least {n_folds} subjects for {n_folds} folds, got {len(subjects)}")
    rng = np.random.default_rng(seed)
    by_group: dict[str, list[str]] = defaultdict(list)
    for s in subjects:
        by_group[subject_groups[s]].append(s)

    folds: list[list[str]] = [[] for _ in range(n_folds)]
    cursor = 0
    for group in sorted(by_group):
        members = list(by_group[group])
        rng.shuffle(members)
        for s in members:
            folds[cursor % n_folds].append(s)
            cursor += 1

    validation = []
    for members in folds:
        n_val = min(max(1, int(round(val_fraction * len(members)))), len(members) - 1) if len(members) > 1 else 0
        queues = {g: [s for s in members if subject_groups[s] == g] for g in sorted(by_group)}
        order = [g for g in sorted(queues, key=lambda g: -len(queues[g])) if queues[g]]
        picked: list[str] = []
        while len(picked) < n_val:
            for g in order:
                if queues[g] and len(picked) < n_val:
                    picked.append(queues[g].pop(int(rng.integers(len(queues[g])))))
        validation.append(sorted(picked))
    return CvSplit([sorted(f) for f in folds], validation, seed)
