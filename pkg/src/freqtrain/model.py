"""The three networks: feature extractor ``f``, pretraining head ``c_p``, staging head ``c_f``.

Parameters live in one flat :class:`ModelParams` keyed by dotted names
whose first segment is the owning component, so a checkpoint can hand the
feature extractor alone to a fine-tuning run.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor, TensorError, as_tensor, load_checkpoint, save_checkpoint
from .tensor import functional as F

COMPONENTS = ("f", "c_p", "c_f")


@dataclass(frozen=True)
class Architecture:
    n_channels: int = 3
    input_length: int = 3000
    n_filters: int = 128
    kernels: tuple[int, ...] = (50, 8, 8, 8)
    strides: tuple[int, ...] = (25, 1, 1, 1)
    pool_first: int = 8
    pool_last: int = 4
    dropout: float = 0.5
    n_bins: int = 20
    pretrain_hidden: int = 80
    lstm_hidden: int = 128
    n_stages: int = 5
    seq_len: int = 11

    def conv_paddings(self) -> list[tuple[int, int]]:
        pads = []
        length = self.input_length
        for i, (k, s) in enumerate(zip(self.kernels, self.strides)):
            pad = F.same_padding(length, k, s)
            pads.append(pad)
            length = F.conv_output_length(length, k, s, pad)
            if i == 0:
                length //= self.pool_first
        return pads

    @property
    def feature_length(self) -> int:
        length = self.input_length
        for i, (k, s, pad) in enumerate(zip(self.kernels, self.strides, self.conv_paddings())):
            length = F.conv_output_length(length, k, s, pad)
            if i == 0:
                length //= self.pool_first
        return length // self.pool_last

    @property
    def feature_dim(self) -> int:
        return self.n_filters * self.feature_length

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        for key in ("kernels", "strides"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


DEFAULT_ARCHITECTURE = Architecture()
assert DEFAULT_ARCHITECTURE.feature_dim == 384, DEFAULT_ARCHITECTURE.feature_dim


@dataclass
class ModelParams:
    arch: Architecture
    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def component_of(self, name: str) -> str:
        return name.split(".", 1)[0]

    def names(self, component: str | None = None) -> list[str]:
        return [n for n in self.params if component is None or self.component_of(n) == component]

    def trainable(self, components) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if self.component_of(n) in components}

    def set_trainable(self, components) -> None:
        for n, p in self.params.items():
            p.requires_grad = self.component_of(n) in components

    def arrays(self) -> dict[str, np.ndarray]:
        out = {n: p.data for n, p in self.params.items()}
        out.update(self.buffers)
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            {n: Tensor(p.data.copy(), requires_grad=p.requires_grad, _check=False) for n, p in self.params.items()},
            {n: b.copy() for n, b in self.buffers.items()},
        )

    def load_arrays(self, arrays: dict[str, np.ndarray], components=COMPONENTS) -> None:
        """Overwrite parameters and buffers of ``components`` from ``arrays``."""
        for name in list(self.params) + list(self.buffers):
            if self.component_of(name) not in components:
                continue
            if name not in arrays:
                raise KeyError(f"checkpoint lacks {name!r}")
            target = self.params[name].data if name in self.params else self.buffers[name]
            if target.shape != arrays[name].shape:
                raise TensorError(f"{name}: checkpoint shape {arrays[name].shape} != model shape {target.shape}")
            if name in self.params:
                self.params[name].data = np.array(arrays[name], dtype=np.float64)
            else:
                self.buffers[name] = np.array(arrays[name], dtype=np.float64)

    def checksum(self, component: str) -> str:
        h = hashlib.sha256()
        for name in sorted(list(self.params) + list(self.buffers)):
            if self.component_of(name) == component:
                h.update(name.encode())
                data = self.params[name].data if name in self.params else self.buffers[name]
                h.update(np.ascontiguousarray(data).tobytes())
        return h.hexdigest()

    def save(self, path: str | Path, meta: dict | None = None, components=COMPONENTS) -> None:
        arrays = {n: a for n, a in self.arrays().items() if self.component_of(n) in components}
        info = {"architecture": self.arch.to_dict()}
        info.update(meta or {})
        save_checkpoint(path, arrays, {n: self.component_of(n) for n in arrays}, info)

    @classmethod
    def load(cls, path: str | Path, seed: int = 0) -> tuple["ModelParams", dict]:
        arrays, manifest = load_checkpoint(path)
        arch = Architecture.from_dict(manifest["meta"]["architecture"])
        model = init_params(arch, seed)
        present = {e["component"] for e in manifest["params"]}
        model.load_arrays(arrays, components=tuple(c for c in COMPONENTS if c in present))
        return model, manifest


INIT_SCHEMES = ("kaiming_normal", "fan_in_uniform")


def _weight_and_bias(rng: np.random.Generator, scheme: str, shape: tuple[int, ...], fan_in: int, n_out: int):
    """``kaiming_normal``: N(0, 2/fan_in) weights, zero biases.

    ``fan_in_uniform``: weights and biases U(+-1/sqrt(fan_in)), the common
    deep-learning framework default for conv and dense layers.
    """
    if scheme == "kaiming_normal":
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), np.zeros(n_out)
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape), rng.uniform(-bound, bound, size=n_out)


def init_params(arch: Architecture = DEFAULT_ARCHITECTURE, seed: int = 0, scheme: str = "kaiming_normal") -> ModelParams:
    """Conv/dense weights per ``scheme``, unit BN scale, uniform LSTM weights with forget bias 1."""
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"init scheme must be one of {INIT_SCHEMES}, got {scheme!r}")
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    in_ch = arch.n_channels
    for i, k in enumerate(arch.kernels, start=1):
        p[f"f.conv{i}.weight"], p[f"f.conv{i}.bias"] = _weight_and_bias(
            rng, scheme, (arch.n_filters, in_ch, k), in_ch * k, arch.n_filters
        )
        p[f"f.bn{i}.gamma"] = np.ones(arch.n_filters)
        p[f"f.bn{i}.beta"] = np.zeros(arch.n_filters)
        buffers[f"f.bn{i}.running_mean"] = np.zeros(arch.n_filters)
        buffers[f"f.bn{i}.running_var"] = np.ones(arch.n_filters)
        in_ch = arch.n_filters

    d = arch.feature_dim
    p["c_p.dense1.weight"], p["c_p.dense1.bias"] = _weight_and_bias(
        rng, scheme, (d, arch.pretrain_hidden), d, arch.pretrain_hidden
    )
    p["c_p.dense2.weight"], p["c_p.dense2.bias"] = _weight_and_bias(
        rng, scheme, (arch.pretrain_hidden, arch.n_bins), arch.pretrain_hidden, arch.n_bins
    )

    h = arch.lstm_hidden
    bound = 1.0 / np.sqrt(h)
    for direction in ("fwd", "bwd"):
        p[f"c_f.lstm.{direction}.w_ih"] = rng.uniform(-bound, bound, size=(d, 4 * h))
        p[f"c_f.lstm.{direction}.w_hh"] = rng.uniform(-bound, bound, size=(h, 4 * h))
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0  # forget gate
        p[f"c_f.lstm.{direction}.bias"] = bias
    p["c_f.dense.weight"], p["c_f.dense.bias"] = _weight_and_bias(
        rng, scheme, (2 * h, arch.n_stages), 2 * h, arch.n_stages
    )

    params = {n: Tensor(v, requires_grad=True, name=n) for n, v in p.items()}
    return ModelParams(arch, params, buffers)


def _mode_flag(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


def extract_features(
    model: ModelParams, epochs, mode: str = "eval", rng: np.random.Generator | None = None
) -> Tensor:
    """Map ``[batch, 3, 3000]`` epochs to ``[batch, feature_dim]`` features."""
    train = _mode_flag(mode)
    arch = model.arch
    x = as_tensor(epochs)
    expected = (arch.n_channels, arch.input_length)
    if x.ndim != 3 or x.shape[1:] != expected:
        raise TensorError(f"feature extractor expects [batch, {expected[0]}, {expected[1]}], got {x.shape}")
    p, b = model.params, model.buffers
    pads = arch.conv_paddings()
    for i in range(1, len(arch.kernels) + 1):
        x = F.conv1d(x, p[f"f.conv{i}.weight"], p[f"f.conv{i}.bias"], arch.strides[i - 1], pads[i - 1])
        x = F.batchnorm1d(
            x, p[f"f.bn{i}.gamma"], p[f"f.bn{i}.beta"], b[f"f.bn{i}.running_mean"], b[f"f.bn{i}.running_var"], train
        )
        x = x.relu()
        if i == 1:
            x = F.dropout(F.maxpool1d(x, arch.pool_first), arch.dropout, train, rng)
    x = F.dropout(F.maxpool1d(x, arch.pool_last), arch.dropout, train, rng)
    return x.reshape(x.shape[0], arch.feature_dim)


def bin_probabilities(model: ModelParams, features: Tensor) -> Tensor:
    p = model.params
    h = F.dense(features, p["c_p.dense1.weight"], p["c_p.dense1.bias"]).relu()
    return F.dense(h, p["c_p.dense2.weight"], p["c_p.dense2.bias"]).sigmoid()


def predict_bins(model: ModelParams, features: Tensor) -> tuple[Tensor, np.ndarray]:
    """Bin probabilities and 0/1 predictions (present iff probability > 0.5)."""
    probs = bin_probabilities(model, features)
    return probs, (probs.data > 0.5).astype(np.uint8)


def predict_stage(
    model: ModelParams, sequence: Tensor, mode: str = "eval", rng: np.random.Generator | None = None
) -> Tensor:
    """Stage distribution of the centre epoch from ``[batch, seq_len, feature_dim]`` features."""
    train = _mode_flag(mode)
    arch = model.arch
    seq = as_tensor(sequence)
    if seq.ndim != 3 or seq.shape[1] != arch.seq_len:
        raise TensorError(f"staging head expects [batch, {arch.seq_len}, features], got {seq.shape}")
    if seq.shape[2] != arch.feature_dim:
        raise TensorError(f"staging head expects {arch.feature_dim} features per epoch, got {seq.shape[2]}")
    steps = [seq[:, t, :] for t in range(arch.seq_len)]
    lstm_params = {k.removeprefix("c_f.lstm."): v for k, v in model.params.items() if k.startswith("c_f.lstm.")}
    outputs = F.bilstm(steps, lstm_params)
    centre = outputs[arch.seq_len // 2]
    centre = F.dropout(centre, arch.dropout, train, rng)
    logits = F.dense(centre, model.params["c_f.dense.weight"], model.params["c_f.dense.bias"])
    return F.softmax(logits)
