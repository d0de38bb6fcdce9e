"""Losses and evaluation metrics for frequency-bin prediction and sleep staging."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor

PROB_CLAMP = 1e-7


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def bce_loss(y, y_hat_prob) -> Tensor:
    """Mean binary cross-entropy; differentiable in ``y_hat_prob``."""
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    p = as_tensor(y_hat_prob)
    _check_same_shape(y, p.data)
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = p.log() * y + (1.0 - p).log() * (1.0 - y)
    return -terms.mean()


def categorical_ce(true_stage, probabilities) -> Tensor:
    """Mean ``-log p(true stage)`` over the batch; probabilities are ``[batch, k]``."""
    p = as_tensor(probabilities)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    stages = np.atleast_1d(np.asarray(true_stage))
    k = p.shape[1]
    if stages.shape[0] != p.shape[0]:
        raise ValueError(f"{stages.shape[0]} targets for {p.shape[0]} predictions")
    if not np.issubdtype(stages.dtype, np.integer) or stages.min() < 0 or stages.max() >= k:
        raise ValueError(f"stage indices must be integers in [0, {k})")
    onehot = np.zeros(p.shape)
    onehot[np.arange(len(stages)), stages] = 1.0
    picked = (p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP) * onehot).sum(axis=1)
    return -picked.log().mean()


def threshold(probabilities: np.ndarray, cut: float = 0.5) -> np.ndarray:
    """Bin present iff its probability is strictly greater than ``cut``."""
    return (np.asarray(probabilities) > cut).astype(np.uint8)


def hamming_metric(y: np.ndarray, y_hat: np.ndarray) -> float:
    y, y_hat = np.asarray(y), np.asarray(y_hat)
    _check_same_shape(y, y_hat)
    return float(np.mean(y == y_hat))


def per_bin_accuracy(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    y, y_hat = np.asarray(y), np.asarray(y_hat)
    _check_same_shape(y, y_hat)
    return (y == y_hat).mean(axis=0)


def confusion_matrix(true: np.ndarray, pred: np.ndarray, k: int = 5) -> np.ndarray:
    """Rows are true stages, columns predicted stages."""
    true, pred = np.asarray(true), np.asarray(pred)
    _check_same_shape(true, pred)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 per stage; a stage with zero precision and recall (or no support at all) scores 0."""
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(actual > 0, tp / actual, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return f1


def macro_f1(cm: np.ndarray, classes=None) -> float:
    """Unweighted mean of per-stage F1, over all stages or over ``classes`` only."""
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] == 0:
        raise ValueError(f"confusion matrix must be square and non-empty, got shape {cm.shape}")
    if cm.sum() == 0:
        raise ValueError("confusion matrix holds no scored epochs")
    f1 = per_class_f1(cm)
    if classes is not None:
        idx = np.asarray(classes, dtype=np.int64)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= len(f1):
            raise ValueError(f"classes must index stages in [0, {len(f1)})")
        f1 = f1[idx]
    return float(f1.mean())


def paired_bootstrap_diff(
    scores_a, scores_b, n_boot: int = 10_000, seed: int = 0
) -> tuple[float, float]:
    """Mean and standard deviation of bootstrap means of the paired differences ``a - b``."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired scores must be equal-length vectors, got {a.shape} and {b.shape}")
    diffs = a - b
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(diffs), size=(n_boot, len(diffs)))
    means = diffs[picks].mean(axis=1)
    return float(means.mean()), float(means.std())


def evaluation_record(
    run_id: str,
    split: str,
    epoch: int,
    loss: float,
    hamming: float | None = None,
    per_bin: np.ndarray | None = None,
    mf1: float | None = None,
    cm: np.ndarray | None = None,
) -> dict:
    """The JSON-ready metrics record emitted after every evaluation."""
    return {
        "run_id": run_id,
        "split": split,
        "epoch": int(epoch),
        "loss": float(loss),
        "hamming": None if hamming is None else float(hamming),
        "per_bin_accuracy": None if per_bin is None else [float(v) for v in per_bin],
        "macro_f1": None if mf1 is None else float(mf1),
        "confusion_matrix": None if cm is None else np.asarray(cm).tolist(),
    }
