"""Layer primitives used by the sleep-staging networks.

Convolution, pooling, batch normalisation and softmax carry hand-derived
backward passes; the LSTM is composed from the elementwise ops in
:mod:`freqtrain.tensor.core` so its gradient comes from the graph.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DTYPE, Tensor, TensorError, as_tensor, concat, is_grad_enabled

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_output_length(length: int, kernel: int, stride: int, padding: int | tuple[int, int]) -> int:
    left, right = _pad_pair(padding)
    return (length + left + right - kernel) // stride + 1


def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int]:
    """Padding that yields ``ceil(length / stride)`` outputs, extra sample on the right."""
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2


def _pad_pair(padding) -> tuple[int, int]:
    if isinstance(padding, (tuple, list)):
        left, right = int(padding[0]), int(padding[1])
    else:
        left = right = int(padding)
    if left < 0 or right < 0:
        raise TensorError(f"padding must be non-negative, got {padding}")
    return left, right


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation of ``x[batch, in_ch, length]`` with ``weight[out_ch, in_ch, k]``."""
    if x.ndim != 3:
        raise TensorError(f"conv1d input must be [batch, channels, length], got shape {x.shape}")
    if weight.ndim != 3:
        raise TensorError(f"conv1d weight must be [out_ch, in_ch, k], got shape {weight.shape}")
    batch, in_ch, length = x.shape
    out_ch, w_in, k = weight.shape
    if w_in != in_ch:
        raise TensorError(f"conv1d in_channels mismatch: input has {in_ch}, weight expects {w_in}")
    if bias is not None and bias.shape != (out_ch,):
        raise TensorError(f"conv1d bias must have shape ({out_ch},), got {bias.shape}")
    if stride < 1:
        raise TensorError(f"conv1d stride must be positive, got {stride}")
    left, right = _pad_pair(padding)
    padded_len = length + left + right
    if padded_len < k:
        raise TensorError(f"conv1d length {length} with padding ({left}, {right}) is shorter than kernel {k}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if left or right else x.data
    out_len = (padded_len - k) // stride + 1
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(batch * out_len, in_ch * k)
    wmat = weight.data.reshape(out_ch, in_ch * k)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(batch, out_len, out_ch).transpose(0, 2, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(batch * out_len, out_ch)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(batch, out_len, in_ch, k).transpose(0, 2, 1, 3)
            dxp = np.zeros((batch, in_ch, padded_len), dtype=DTYPE)
            span = stride * (out_len - 1) + 1
            for j in range(k):
                dxp[:, :, j : j + span : stride] += dcols[:, :, :, j]
            gx = dxp[:, :, left : left + length]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(np.ascontiguousarray(out), parents, backward)


def maxpool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling; trailing samples that do not fill a window are dropped."""
    if window < 1:
        raise TensorError(f"maxpool window must be positive, got {window}")
    *lead, length = x.shape
    if length < window:
        raise TensorError(f"maxpool length {length} is shorter than window {window}")
    out_len = length // window
    blocks = x.data[..., : out_len * window].reshape(*lead, out_len, window)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gblocks = np.zeros(blocks.shape, dtype=DTYPE)
        np.put_along_axis(gblocks, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros(x.shape, dtype=DTYPE)
        gx[..., : out_len * window] = gblocks.reshape(*lead, out_len * window)
        return (gx,)

    return Tensor._from_op(out, (x,), backward)


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Batch normalisation over ``(batch, length)`` for ``x[batch, ch, length]``.

    In train mode the running buffers are updated in place (unbiased
    variance, as is conventional); eval mode reads them only.
    """
    if x.ndim != 3:
        raise TensorError(f"batchnorm1d input must be [batch, channels, length], got shape {x.shape}")
    ch = x.shape[1]
    if gamma.shape != (ch,) or beta.shape != (ch,):
        raise TensorError(f"batchnorm1d gamma/beta must have shape ({ch},)")
    g_ = gamma.data[None, :, None]
    b_ = beta.data[None, :, None]

    if not train:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None]) * inv_std[None, :, None]
        scale = g_ * inv_std[None, :, None]

        def backward_eval(g):
            return (g * scale, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2)))

        return Tensor._from_op(xhat * g_ + b_, (x, gamma, beta), backward_eval)

    n = x.shape[0] * x.shape[2]
    if n < 2:
        raise TensorError("batchnorm1d train mode needs batch * length >= 2")
    mean = x.data.mean(axis=(0, 2))
    var = x.data.var(axis=(0, 2))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None]) * inv_std[None, :, None]
    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * var * n / (n - 1)

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2))
        gb = g.sum(axis=(0, 2))
        gx = None
        if x.requires_grad:
            dxhat = g * g_
            gx = (inv_std[None, :, None] / n) * (
                n * dxhat
                - dxhat.sum(axis=(0, 2), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
            )
        return (gx, gg, gb)

    return Tensor._from_op(xhat * g_ + b_, (x, gamma, beta), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[batch, in] @ weight[in, out] + bias[out]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise TensorError(f"dense shape mismatch: input {x.shape}, weight {weight.shape}")
    out = x @ weight
    return out + bias if bias is not None else out


def relu(x: Tensor) -> Tensor:
    return as_tensor(x).relu()


def sigmoid(x: Tensor) -> Tensor:
    return as_tensor(x).sigmoid()


def tanh(x: Tensor) -> Tensor:
    return as_tensor(x).tanh()


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise TensorError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise TensorError("dropout in train mode needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,))


def lstm(
    inputs: Sequence[Tensor],
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    reverse: bool = False,
) -> list[Tensor]:
    """Single-direction LSTM over ``inputs`` (each ``[batch, feat]``).

    Gate layout in the 4*hidden axis is (input, forget, cell, output).
    Returns the hidden state for every step, in input order.
    """
    if not inputs:
        raise TensorError("lstm needs a non-empty sequence")
    hidden = w_hh.shape[0]
    feat = inputs[0].shape[1]
    if w_ih.shape != (feat, 4 * hidden) or w_hh.shape != (hidden, 4 * hidden) or bias.shape != (4 * hidden,):
        raise TensorError(
            f"lstm parameter shapes {w_ih.shape}, {w_hh.shape}, {bias.shape} do not match feat={feat}, hidden={hidden}"
        )
    for t, x in enumerate(inputs):
        if x.shape[1] != feat:
            raise TensorError(f"lstm step {t} has {x.shape[1]} features, expected {feat}")
    batch = inputs[0].shape[0]
    h = Tensor(np.zeros((batch, hidden)), _check=False)
    c = Tensor(np.zeros((batch, hidden)), _check=False)
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    outputs: list[Tensor | None] = [None] * len(inputs)
    H = hidden
    for t in order:
        z = inputs[t] @ w_ih + h @ w_hh + bias
        i = z[:, 0:H].sigmoid()
        f = z[:, H : 2 * H].sigmoid()
        g = z[:, 2 * H : 3 * H].tanh()
        o = z[:, 3 * H : 4 * H].sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
        outputs[t] = h
    return outputs  # type: ignore[return-value]


def bilstm(inputs: Sequence[Tensor], params: dict[str, Tensor]) -> list[Tensor]:
    """Bidirectional LSTM; each step's output is ``[forward_h, backward_h]``.

    ``params`` holds ``fwd.w_ih``, ``fwd.w_hh``, ``fwd.bias`` and the same
    names under ``bwd.``.
    """
    fwd = lstm(inputs, params["fwd.w_ih"], params["fwd.w_hh"], params["fwd.bias"])
    bwd = lstm(inputs, params["bwd.w_ih"], params["bwd.w_hh"], params["bwd.bias"], reverse=True)
    return [concat([a, b], axis=1) for a, b in zip(fwd, bwd)]


__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "batchnorm1d",
    "bilstm",
    "conv1d",
    "conv_output_length",
    "dense",
    "dropout",
    "is_grad_enabled",
    "lstm",
    "maxpool1d",
    "relu",
    "same_padding",
    "sigmoid",
    "softmax",
    "tanh",
]
