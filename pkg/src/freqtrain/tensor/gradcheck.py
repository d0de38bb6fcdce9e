"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, no_grad


def _project(out, weights) -> float:
    if isinstance(out, Tensor):
        out = [out]
    return float(sum(np.sum(o.data * w) for o, w in zip(out, weights)))


def numerical_gradients(
    fn: Callable[..., Tensor | Sequence[Tensor]],
    inputs: Sequence[np.ndarray],
    weights: Sequence[np.ndarray],
    h: float = 1e-5,
) -> list[np.ndarray]:
    """Gradient of ``sum(fn(*inputs) * weights)`` by central differences."""
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    grads = []
    with no_grad():
        for a in arrays:
            g = np.zeros_like(a)
            flat = a.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                plus = _project(fn(*[Tensor(x) for x in arrays]), weights)
                flat[i] = orig - h
                minus = _project(fn(*[Tensor(x) for x in arrays]), weights)
                flat[i] = orig
                gflat[i] = (plus - minus) / (2 * h)
            grads.append(g)
    return grads


def autodiff_gradients(
    fn: Callable[..., Tensor | Sequence[Tensor]],
    inputs: Sequence[np.ndarray],
    weights: Sequence[np.ndarray],
) -> list[np.ndarray]:
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
    out = fn(*leaves)
    outs = [out] if isinstance(out, Tensor) else list(out)
    loss = None
    for o, w in zip(outs, weights):
        term = (o * Tensor(w)).sum()
        loss = term if loss is None else loss + term
    loss.backward()
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(
    fn: Callable[..., Tensor | Sequence[Tensor]],
    inputs: Sequence[np.ndarray],
    rng: np.random.Generator,
    h: float = 1e-5,
) -> list[float]:
    """Relative error between autodiff and finite differences, one per input."""
    with no_grad():
        probe = fn(*[Tensor(np.array(a, dtype=np.float64)) for a in inputs])
    probes = [probe] if isinstance(probe, Tensor) else list(probe)
    weights = [rng.standard_normal(p.shape) for p in probes]
    auto = autodiff_gradients(fn, inputs, weights)
    num = numerical_gradients(fn, inputs, weights, h=h)
    return [relative_error(a, n) for a, n in zip(auto, num)]
