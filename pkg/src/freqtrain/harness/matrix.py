"""Experiment matrix: repetitions x folds for every grid cell, persisted per run.

A grid file looks like::

    {"experiment": "low-data",
     "base": {"n_filters": 32, "pretrain": {"n_train": 20000}},
     "axes": {"configuration": ["fixed_fe", "untrained_fe"],
              "n_samples": [50, null],
              "pretrain.n_synthetic": [10, 20000]},
     "repetitions": 3, "folds": 5}

Each combination of axis values is a cell. Records live at
``<out>/<experiment>/<run_id>.json``; runs whose record already reports
``"status": "ok"`` are skipped, so an interrupted matrix can be resumed.
"""

from __future__ import annotations

import copy
import itertools
import json
import logging
import os
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..metrics import paired_bootstrap_diff
from .config import NEEDS_PRETRAINING, ExperimentSpec
from .training import finetune, pretrain

log = logging.getLogger(__name__)

Runner = Callable[[ExperimentSpec, Path], dict]


def write_json_atomic(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=1)
    os.replace(tmp, path)


def _set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def expand_grid(grid: dict) -> list[tuple[dict, list[ExperimentSpec]]]:
    """``[(cell values, specs)]`` with one spec per repetition and fold."""
    axes = grid.get("axes", {})
    names = list(axes)
    n_reps = grid.get("repetitions", 3)
    n_folds = grid.get("folds", grid.get("base", {}).get("n_folds", 5))
    cells = []
    for values in itertools.product(*(axes[n] for n in names)):
        cell = dict(zip(names, values))
        specs = []
        for rep in range(n_reps):
            for fold in range(n_folds):
                d = copy.deepcopy(grid.get("base", {}))
                d["experiment"] = grid.get("experiment", "default")
                d["n_folds"] = n_folds
                for k, v in cell.items():
                    _set_dotted(d, k, v)
                d["repetition"], d["fold"] = rep, fold
                specs.append(ExperimentSpec.from_dict(d))
        cells.append((cell, specs))
    return cells


def default_runner(spec: ExperimentSpec, experiment_dir: Path) -> dict:
    """Pretrain if needed (cached by pretraining key), then fine-tune and return the run record."""
    ckpt = None
    if spec.configuration in NEEDS_PRETRAINING:
        ckpt = experiment_dir / "pretrain" / f"{spec.pretrain_key()}.ckpt"
        if not ckpt.exists():
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            pretrain(spec, ckpt)
    return finetune(spec, ckpt).record(spec)


def _execute(spec: ExperimentSpec, experiment_dir: Path, runner: Runner) -> dict:
    path = experiment_dir / f"{spec.run_id()}.json"
    try:
        record = runner(spec, experiment_dir)
        record["status"] = "ok"
    except Exception as exc:  # a failed run must not stop the matrix
        log.warning("run %s failed: %s", spec.run_id(), exc)
        record = {
            "run_id": spec.run_id(),
            "spec": spec.to_dict(),
            "status": "failed",
            "error": f"{type(exc).__name__}: {exc}",
            "traceback": traceback.format_exc(),
        }
    write_json_atomic(path, record)
    return record


def load_record(path: Path) -> dict | None:
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None


@dataclass
class CellSummary:
    cell: dict
    macro_f1: list[float | None]  # indexed like the cell's specs; None for failed runs
    keys: list[tuple[int, int]]  # (repetition, fold)
    failures: list[str] = field(default_factory=list)

    @property
    def completed(self) -> list[float]:
        return [v for v in self.macro_f1 if v is not None]

    def mean(self) -> float:
        return float(np.mean(self.completed)) if self.completed else float("nan")

    def std(self) -> float:
        return float(np.std(self.completed)) if self.completed else float("nan")

    def to_dict(self) -> dict:
        return {
            "cell": self.cell,
            "n_runs": len(self.macro_f1),
            "n_ok": len(self.completed),
            "n_failed": len(self.failures),
            "macro_f1_mean": self.mean(),
            "macro_f1_std": self.std(),
            "failures": self.failures,
        }


@dataclass
class MatrixResult:
    cells: list[CellSummary]
    comparisons: list[dict]
    records: list[dict]

    def table(self) -> list[dict]:
        return [c.to_dict() for c in self.cells]

    def to_dict(self) -> dict:
        return {"cells": self.table(), "comparisons": self.comparisons}


def compare_configurations(cells: list[CellSummary], n_boot: int = 10_000, seed: int = 0) -> list[dict]:
    """Paired bootstrap of macro F1 differences between cells that differ only in configuration."""
    out = []
    for a, b in itertools.combinations(cells, 2):
        rest_a = {k: v for k, v in a.cell.items() if k != "configuration"}
        rest_b = {k: v for k, v in b.cell.items() if k != "configuration"}
        if rest_a != rest_b or a.cell.get("configuration") == b.cell.get("configuration"):
            continue
        scores_a = dict(zip(a.keys, a.macro_f1))
        scores_b = dict(zip(b.keys, b.macro_f1))
        shared = [k for k in a.keys if scores_a.get(k) is not None and scores_b.get(k) is not None]
        if not shared:
            continue
        mean, std = paired_bootstrap_diff(
            np.array([scores_a[k] for k in shared]), np.array([scores_b[k] for k in shared]), n_boot, seed
        )
        out.append({
            "a": a.cell,
            "b": b.cell,
            "n_pairs": len(shared),
            "diff_mean": mean,
            "diff_std": std,
        })
    return out


def run_matrix(
    grid: dict,
    out: str | Path,
    runner: Runner = default_runner,
    workers: int = 1,
) -> MatrixResult:
    experiment_dir = Path(out) / grid.get("experiment", "default")
    experiment_dir.mkdir(parents=True, exist_ok=True)
    cells = expand_grid(grid)

    pending = []
    for _, specs in cells:
        for spec in specs:
            rec = load_record(experiment_dir / f"{spec.run_id()}.json")
            if rec is None or rec.get("status") != "ok":
                pending.append(spec)
    log.info("matrix %s: %d runs, %d pending", experiment_dir.name, sum(len(s) for _, s in cells), len(pending))

    if workers > 1 and pending:
        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_execute, pending, [experiment_dir] * len(pending), [runner] * len(pending)))
    else:
        for spec in pending:
            _execute(spec, experiment_dir, runner)

    summaries, records = [], []
    for cell, specs in cells:
        summary = CellSummary(cell, [], [])
        for spec in specs:
            rec = load_record(experiment_dir / f"{spec.run_id()}.json") or {"status": "failed", "error": "missing"}
            records.append(rec)
            summary.keys.append((spec.repetition, spec.fold))
            if rec.get("status") == "ok":
                summary.macro_f1.append(float(rec["test"]["macro_f1"]))
            else:
                summary.macro_f1.append(None)
                summary.failures.append(f"{spec.run_id()}: {rec.get('error')}")
        summaries.append(summary)
    result = MatrixResult(summaries, compare_configurations(summaries), records)
    write_json_atomic(experiment_dir / "summary.json", result.to_dict())
    return result
