"""Adam with L2-coupled weight decay, and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Tensor, TensorError


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray | None], state: AdamState) -> None:
    """Apply one Adam update in place.

    Weight decay is added to the gradient (``g + wd * w``) before the
    moment updates. Parameters with no gradient are left untouched.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TensorError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def global_grad_norm(grads: Mapping[str, np.ndarray | None]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values() if g is not None)))


def clip_grad_norm(grads: dict[str, np.ndarray | None], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    if max_norm <= 0:
        raise TensorError(f"max_norm must be positive, got {max_norm}")
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for name, g in grads.items():
            if g is not None:
                grads[name] = g * scale
    return norm
