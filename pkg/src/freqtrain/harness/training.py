"""Pretraining on synthetic sine mixtures and fine-tuning for sleep staging."""

from __future__ import annotations

import functools
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import metrics
from ..epochs import N_STAGES, EpochSet, load_epoch_dir
from ..model import ModelParams, extract_features, init_params, predict_bins, predict_stage
from ..synthgen import BinScheme, generate_arrays, resample_indices
from ..tensor import AdamState, Tensor, adam_step, clip_grad_norm, no_grad, zero_grads
from .config import FROZEN_FE, NEEDS_PRETRAINING, ExperimentSpec, ProxyParams, int_seed, rng_for
from .data import PLACEHOLDER, duplicate_for_constant_updates, sequence_windows, subsample_training_data
from .proxy import make_proxy_dataset
from .splits import CvSplit, make_cv_splits

log = logging.getLogger(__name__)

EVAL_BATCH = 256


class TrainingError(RuntimeError):
    pass


class CheckpointMissing(FileNotFoundError):
    pass


# -- pretraining ------------------------------------------------------------

@dataclass
class PretrainResult:
    model: ModelParams
    history: list[dict]
    step_losses: list[float]
    checkpoint: Path | None = None
    seconds: float = 0.0

    @property
    def final_validation(self) -> dict:
        return [h for h in self.history if h["split"] == "validation"][-1]


def init_seed(spec: ExperimentSpec) -> int:
    return int_seed(spec.seed, spec.repetition, spec.fold, "init")


def synthetic_seed(spec: ExperimentSpec) -> int:
    return int_seed(spec.seed, spec.repetition, spec.fold, "synthetic")


def _check_finite(loss: Tensor, where: str) -> None:
    if not np.isfinite(loss.item()):
        raise TrainingError(f"non-finite loss {loss.item()} at {where}")


def pretrain(
    spec: ExperimentSpec,
    out: str | Path | None = None,
    max_steps: int | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> PretrainResult:
    """Train ``f`` and ``c_p`` to predict which frequency bins a synthetic sample contains."""
    started = time.time()
    hp = spec.pretrain
    arch = spec.architecture
    scheme = BinScheme(hp.n_bins, hp.f_min, hp.f_max)
    n_synthetic = hp.n_synthetic or hp.n_train
    data_seed = synthetic_seed(spec)

    order_map = resample_indices(n_synthetic, hp.n_train)
    n_unique = min(n_synthetic, hp.n_train)
    train_x, train_y = generate_arrays(n_unique, scheme, data_seed)
    val_x, val_y = generate_arrays(hp.n_val, scheme, data_seed, start=max(hp.n_train, n_synthetic))

    model = init_params(arch, init_seed(spec), spec.init_scheme)
    params = model.trainable(("f", "c_p"))
    model.set_trainable(("f", "c_p"))
    state = AdamState(hp.learning_rate, weight_decay=hp.weight_decay)
    shuffle_rng = rng_for(spec.seed, spec.repetition, spec.fold, "pretrain-shuffle")
    dropout_rng = rng_for(spec.seed, spec.repetition, spec.fold, "pretrain-dropout")
    run_id = spec.pretrain_key()

    history: list[dict] = []
    step_losses: list[float] = []
    steps = 0
    for epoch in range(1, hp.epochs + 1):
        perm = shuffle_rng.permutation(hp.n_train)
        loss_sum, match_sum, count = 0.0, 0.0, 0
        for start in range(0, hp.n_train, hp.batch_size):
            rows = order_map[perm[start : start + hp.batch_size]]
            x = train_x[rows].astype(np.float64)
            y = train_y[rows]
            zero_grads(params.values())
            feats = extract_features(model, x, "train", dropout_rng)
            probs, pred = predict_bins(model, feats)
            loss = metrics.bce_loss(y, probs)
            _check_finite(loss, f"pretraining epoch {epoch}, step {steps}")
            loss.backward()
            adam_step(params, {n: p.grad for n, p in params.items()}, state)
            step_losses.append(loss.item())
            loss_sum += loss.item() * len(rows)
            match_sum += float(np.sum(pred == y))
            count += len(rows)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        train_rec = metrics.evaluation_record(
            run_id, "train", epoch, loss_sum / count, hamming=match_sum / (count * hp.n_bins)
        )
        val_loss, val_pred = evaluate_bins(model, val_x, val_y)
        val_rec = metrics.evaluation_record(
            run_id,
            "validation",
            epoch,
            val_loss,
            hamming=metrics.hamming_metric(val_y, val_pred),
            per_bin=metrics.per_bin_accuracy(val_y, val_pred),
        )
        history += [train_rec, val_rec]
        log.info(
            "pretrain epoch %d: train loss %.4f hamming %.4f | val loss %.4f hamming %.4f",
            epoch, train_rec["loss"], train_rec["hamming"], val_rec["loss"], val_rec["hamming"],
        )
        if on_epoch:
            on_epoch(val_rec)
        if max_steps is not None and steps >= max_steps:
            break

    ckpt = None
    if out is not None:
        ckpt = Path(out)
        model.save(ckpt, meta={"pretrain_key": run_id, "history": history}, components=("f", "c_p"))
    return PretrainResult(model, history, step_losses, ckpt, time.time() - started)


def evaluate_bins(model: ModelParams, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    preds, loss_sum = [], 0.0
    with no_grad():
        for start in range(0, len(x), EVAL_BATCH):
            xb = x[start : start + EVAL_BATCH].astype(np.float64)
            probs, pred = predict_bins(model, extract_features(model, xb, "eval"))
            loss_sum += metrics.bce_loss(y[start : start + EVAL_BATCH], probs).item() * len(xb)
            preds.append(pred)
    return loss_sum / len(x), np.concatenate(preds)


# -- data access ------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _proxy_cached(n_subjects: int, epochs_per_subject: int, seed: int, groups: tuple[str, ...]) -> EpochSet:
    return make_proxy_dataset(ProxyParams(n_subjects, epochs_per_subject, seed, groups))


def load_dataset(spec: ExperimentSpec) -> tuple[EpochSet, CvSplit]:
    if spec.dataset == "proxy":
        p = spec.proxy
        epochs = _proxy_cached(p.n_subjects, p.epochs_per_subject, p.seed, tuple(p.groups))
    else:
        epochs = load_epoch_dir(spec.dataset)
    if spec.split_path:
        split = CvSplit.load(spec.split_path)
    else:
        groups = epochs.groups or {}
        split = make_cv_splits({s: groups.get(s, "all") for s in epochs.subjects()}, spec.n_folds, seed=0)
    return epochs, split


# -- fine-tuning ------------------------------------------------------------

@dataclass
class FinetuneResult:
    model: ModelParams
    test_macro_f1: float
    test_confusion: np.ndarray
    history: list[dict]
    step_losses: list[float]
    best_epoch: int
    stopped_epoch: int
    duplication_factor: int
    n_train_samples: int
    f_checksum_before: str
    f_checksum_after: str
    subjects: dict[str, list[str]] = field(default_factory=dict)
    seconds: float = 0.0

    def record(self, spec: ExperimentSpec) -> dict:
        return {
            "run_id": spec.run_id(),
            "spec": spec.to_dict(),
            "configuration": spec.configuration,
            "repetition": spec.repetition,
            "fold": spec.fold,
            "test": {"macro_f1": self.test_macro_f1, "confusion_matrix": self.test_confusion.tolist()},
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "duplication_factor": self.duplication_factor,
            "n_train_samples": self.n_train_samples,
            "f_checksum_before": self.f_checksum_before,
            "f_checksum_after": self.f_checksum_after,
            "subjects": self.subjects,
            "history": self.history,
            "seconds": self.seconds,
        }


class _SequenceSource:
    """Per-split epochs plus sequence windows, with features cached when ``f`` is frozen."""

    def __init__(self, epochs: EpochSet, seq_len: int):
        self.epochs = epochs
        self.windows, self.centres = sequence_windows(epochs, seq_len)
        self.targets = epochs.stages[self.centres]
        self.features: np.ndarray | None = None

    def cache_features(self, model: ModelParams) -> None:
        self.features = _features_table(model, self.epochs)

    def batch_inputs(self, model: ModelParams, rows: np.ndarray, f_mode: str, rng) -> Tensor:
        win = self.windows[rows]
        if self.features is not None:
            table = self.features
            idx = np.where(win == PLACEHOLDER, len(table) - 1, win)
            return Tensor(table[idx], _check=False)
        signals = np.zeros((win.size, *self.epochs.signals.shape[1:]))
        flat = win.reshape(-1)
        real = flat != PLACEHOLDER
        signals[real] = self.epochs.signals[flat[real]]
        feats = extract_features(model, signals, f_mode, rng)
        return feats.reshape(win.shape[0], win.shape[1], model.arch.feature_dim)


def _features_table(model: ModelParams, epochs: EpochSet) -> np.ndarray:
    """Eval-mode features of every epoch, with the zero-signal placeholder as last row."""
    out = []
    with no_grad():
        for start in range(0, len(epochs), EVAL_BATCH):
            x = epochs.signals[start : start + EVAL_BATCH].astype(np.float64)
            out.append(extract_features(model, x, "eval").data)
        out.append(extract_features(model, np.zeros((1, *epochs.signals.shape[1:])), "eval").data)
    return np.concatenate(out)


def evaluate_stages(model: ModelParams, source: _SequenceSource) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and confusion matrix over all sequences of ``source``."""
    frozen_before = source.features is not None
    if not frozen_before:
        source.cache_features(model)
    preds, loss_sum = [], 0.0
    n = len(source.targets)
    with no_grad():
        for start in range(0, n, EVAL_BATCH):
            rows = np.arange(start, min(start + EVAL_BATCH, n))
            probs = predict_stage(model, source.batch_inputs(model, rows, "eval", None), "eval")
            loss_sum += metrics.categorical_ce(source.targets[rows], probs).item() * len(rows)
            preds.append(probs.data.argmax(axis=1))
    if not frozen_before:
        source.features = None
    pred = np.concatenate(preds)
    return loss_sum / n, metrics.confusion_matrix(source.targets, pred, N_STAGES)


def audit_leakage(train: EpochSet, val: EpochSet, forbidden: list[str]) -> None:
    bad = set(forbidden) & (set(train.subject_ids.tolist()) | set(val.subject_ids.tolist()))
    if bad:
        raise TrainingError(f"test-fold subjects leaked into training/validation: {sorted(bad)}")


def finetune(
    spec: ExperimentSpec,
    checkpoint: str | Path | ModelParams | None = None,
    data: tuple[EpochSet, CvSplit] | None = None,
    max_steps: int | None = None,
) -> FinetuneResult:
    """Train the staging head (and ``f`` unless frozen) on one cross-validation fold.

    Early stopping watches validation macro F1; the best validation state
    is restored before the test fold is scored.
    """
    started = time.time()
    hp = spec.finetune
    config = spec.configuration
    arch = spec.architecture
    epochs, split = data if data is not None else load_dataset(spec)

    parts = split.partition(spec.fold)
    train_pool = epochs.for_subjects(parts["train"])
    val_set = epochs.for_subjects(parts["validation"])
    test_set = epochs.for_subjects(parts["test"])
    audit_leakage(train_pool, val_set, parts["test"] + parts["withheld"])

    model = init_params(arch, init_seed(spec), spec.init_scheme)
    if config == "untrained_fe":
        model.load_arrays(init_params(arch, init_seed(spec), "kaiming_normal").arrays(), components=("f",))
    if config in NEEDS_PRETRAINING:
        if checkpoint is None:
            raise CheckpointMissing(f"configuration {config!r} needs a pretrained checkpoint")
        if isinstance(checkpoint, ModelParams):
            model.load_arrays(checkpoint.arrays(), components=("f",))
        else:
            if not Path(checkpoint).exists():
                raise CheckpointMissing(f"checkpoint {checkpoint} does not exist")
            pretrained, _ = ModelParams.load(checkpoint)
            if pretrained.arch.feature_dim != arch.feature_dim:
                raise TrainingError("checkpoint architecture does not match the experiment")
            model.load_arrays(pretrained.arrays(), components=("f",))

    frozen = config in FROZEN_FE
    components = ("c_f",) if frozen else ("f", "c_f")
    model.set_trainable(components)
    params = model.trainable(components)
    f_mode = "eval" if frozen else "train"
    checksum_before = model.checksum("f")

    train_src = _SequenceSource(train_pool, hp.seq_len)
    val_src = _SequenceSource(val_set, hp.seq_len)
    test_src = _SequenceSource(test_set, hp.seq_len)
    n_full = len(train_src.targets)

    chosen_subjects, rows = subsample_training_data(
        train_pool, spec.n_subjects, spec.n_samples, rng_for(spec.seed, spec.repetition, spec.fold, "subsample")
    )
    row_to_seq = {int(c): i for i, c in enumerate(train_src.centres)}
    selected = np.array([row_to_seq[int(r)] for r in rows], dtype=np.int64)
    factor = duplicate_for_constant_updates(len(selected), n_full)
    epoch_pool = np.repeat(selected, factor)

    if frozen:
        for src in (train_src, val_src, test_src):
            src.cache_features(model)

    state = AdamState(hp.learning_rate, weight_decay=hp.weight_decay)
    shuffle_rng = rng_for(spec.seed, spec.repetition, spec.fold, "finetune-shuffle")
    dropout_rng = rng_for(spec.seed, spec.repetition, spec.fold, "finetune-dropout")
    run_id = spec.run_id()

    history: list[dict] = []
    step_losses: list[float] = []
    best_f1, best_epoch, best_state = -1.0, 0, None
    stale = 0
    steps = 0
    epoch = 0
    for epoch in range(1, hp.max_epochs + 1):
        perm = shuffle_rng.permutation(epoch_pool)
        loss_sum, true_all, pred_all = 0.0, [], []
        for start in range(0, len(perm), hp.batch_size):
            batch = perm[start : start + hp.batch_size]
            zero_grads(params.values())
            inputs = train_src.batch_inputs(model, batch, f_mode, dropout_rng)
            probs = predict_stage(model, inputs, "train", dropout_rng)
            target = train_src.targets[batch]
            loss = metrics.categorical_ce(target, probs)
            _check_finite(loss, f"fine-tuning epoch {epoch}, step {steps}")
            loss.backward()
            grads = {n: p.grad for n, p in params.items()}
            clip_grad_norm(grads, hp.clip_norm)
            adam_step(params, grads, state)
            step_losses.append(loss.item())
            loss_sum += loss.item() * len(batch)
            true_all.append(target)
            pred_all.append(probs.data.argmax(axis=1))
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        train_cm = metrics.confusion_matrix(np.concatenate(true_all), np.concatenate(pred_all), N_STAGES)
        history.append(
            metrics.evaluation_record(
                run_id, "train", epoch, loss_sum / sum(map(len, true_all)),
                mf1=metrics.macro_f1(train_cm), cm=train_cm,
            )
        )
        val_loss, val_cm = evaluate_stages(model, val_src)
        val_f1 = metrics.macro_f1(val_cm)
        history.append(metrics.evaluation_record(run_id, "validation", epoch, val_loss, mf1=val_f1, cm=val_cm))
        log.debug("finetune %s epoch %d: val macro F1 %.4f", config, epoch, val_f1)
        if val_f1 > best_f1:
            best_f1, best_epoch, best_state, stale = val_f1, epoch, model.copy(), 0
        else:
            stale += 1
        if stale >= hp.patience or (max_steps is not None and steps >= max_steps):
            break

    if best_state is not None:
        model.load_arrays(best_state.arrays(), components=("f", "c_f"))
    if not frozen:
        test_src.features = None
    test_loss, test_cm = evaluate_stages(model, test_src)
    test_f1 = metrics.macro_f1(test_cm)
    history.append(metrics.evaluation_record(run_id, "test", best_epoch, test_loss, mf1=test_f1, cm=test_cm))

    return FinetuneResult(
        model=model,
        test_macro_f1=test_f1,
        test_confusion=test_cm,
        history=history,
        step_losses=step_losses,
        best_epoch=best_epoch,
        stopped_epoch=epoch,
        duplication_factor=factor,
        n_train_samples=len(selected),
        f_checksum_before=checksum_before,
        f_checksum_after=model.checksum("f"),
        subjects={**parts, "chosen": chosen_subjects},
        seconds=time.time() - started,
    )
