"""Command-line entry point: ``freqtrain <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from .. import metrics
from ..epochs import load_epoch_dir, write_epoch_cache
from ..model import ModelParams
from ..synthgen import BinScheme, export_shards
from .config import ExperimentSpec, results_root
from .matrix import run_matrix, write_json_atomic
from .splits import CvSplit, make_cv_splits
from .training import _SequenceSource, evaluate_stages, finetune, pretrain

log = logging.getLogger("freqtrain")


def _load_spec(path: str | None) -> ExperimentSpec:
    return ExperimentSpec.from_json(path) if path else ExperimentSpec()


def cmd_gen(args) -> dict:
    scheme = BinScheme(args.bins, args.fmin, args.fmax)
    paths = export_shards(args.out, args.count, args.seed, scheme, args.shard_size)
    return {"shards": [str(p) for p in paths], "count": args.count}


def cmd_ingest(args) -> dict:
    from ..edf import ingest_directory

    channels = [c.strip() for c in args.channels.split(",")]
    subject_of = None
    if args.subject_pattern:
        pattern = re.compile(args.subject_pattern)

        def subject_of(rec_id: str) -> str:
            m = pattern.match(rec_id)
            return m.group(1) if m else rec_id

    epochs = ingest_directory(args.edf_dir, args.hypnogram_dir, channels, crop=args.crop, subject_of=subject_of)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_epoch_cache(out / "epochs-00000.shard", epochs)
    return {"epochs": len(epochs), "subjects": len(epochs.subjects()), "out": str(out)}


def cmd_split(args) -> dict:
    epochs = load_epoch_dir(args.epochs)
    groups = epochs.groups or {}
    split = make_cv_splits({s: groups.get(s, "all") for s in epochs.subjects()}, args.folds, args.seed)
    split.save(args.out)
    return {"folds": [len(f) for f in split.folds], "validation": [len(v) for v in split.validation]}


def cmd_pretrain(args) -> dict:
    spec = _load_spec(args.config)
    result = pretrain(spec, args.out)
    return {"checkpoint": str(result.checkpoint), "validation": result.final_validation}


def cmd_finetune(args) -> dict:
    spec = _load_spec(args.config)
    result = finetune(spec, args.checkpoint)
    record = result.record(spec)
    record["status"] = "ok"
    out_dir = Path(args.out) if args.out else results_root() / spec.experiment
    write_json_atomic(out_dir / f"{spec.run_id()}.json", record)
    result.model.save(out_dir / f"{spec.run_id()}.ckpt", meta={"run_id": spec.run_id()}, components=("f", "c_f"))
    return {"run_id": spec.run_id(), "test_macro_f1": result.test_macro_f1}


def cmd_matrix(args) -> dict:
    grid = json.loads(Path(args.grid).read_text())
    result = run_matrix(grid, args.out or results_root(), workers=args.workers)
    return result.to_dict()


def cmd_eval(args) -> dict:
    model, _ = ModelParams.load(args.checkpoint)
    epochs = load_epoch_dir(args.epochs)
    if args.split:
        subjects = CvSplit.load(args.split).partition(args.fold)["test"]
        epochs = epochs.for_subjects(subjects)
    _, cm = evaluate_stages(model, _SequenceSource(epochs, model.arch.seq_len))
    return {
        "macro_f1": metrics.macro_f1(cm),
        "per_class_f1": metrics.per_class_f1(cm).tolist(),
        "confusion_matrix": cm.tolist(),
        "n_sequences": int(cm.sum()),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqtrain", description="Frequency pretraining for sleep staging.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic pretraining shards")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--fmin", type=float, default=0.3)
    p.add_argument("--fmax", type=float, default=35.0)
    p.add_argument("--shard-size", type=int, default=10_000)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", help="EDF + hypnogram CSVs -> epoch cache")
    p.add_argument("--edf-dir", required=True)
    p.add_argument("--hypnogram-dir", required=True)
    p.add_argument("--channels", required=True, help='three labels, e.g. "C3-M2,F3-M2,EOG1"')
    p.add_argument("--out", required=True)
    p.add_argument("--crop", action="store_true", help="keep 30 min around the sleep period")
    p.add_argument("--subject-pattern", help="regex whose first group extracts the subject id")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="subject-wise cross-validation split")
    p.add_argument("--epochs", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pretrain", help="pretrain on synthetic frequency data")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune one fold")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("matrix", help="run an experiment grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("eval", help="score a fine-tuned checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epochs", required=True)
    p.add_argument("--split")
    p.add_argument("--fold", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=_json_default))
    return 0


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


if __name__ == "__main__":
    sys.exit(main())
