"""Synthetic sine-mixture samples for frequency pretraining.

A sample is three channels of 30 s at 100 Hz. A random subset of
log2-spaced frequency bins is selected; each selected bin contributes one
unit-amplitude sine per channel with a per-channel frequency drawn
uniformly inside the bin and a phase shared across channels. Every
channel is then z-scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .shards import write_shard

N_CHANNELS = 3
SAMPLE_RATE = 100.0
N_TIMESTEPS = 3000
_TIME = np.arange(N_TIMESTEPS) / SAMPLE_RATE


@dataclass(frozen=True)
class BinScheme:
    n_bins: int = 20
    f_min: float = 0.3
    f_max: float = 35.0
    edges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")
        if not self.f_min > 0:
            raise ValueError(f"f_min must be positive for log spacing, got {self.f_min}")
        if not self.f_max > self.f_min:
            raise ValueError(f"f_max ({self.f_max}) must exceed f_min ({self.f_min})")
        j = np.arange(self.n_bins + 1)
        edges = self.f_min * 2.0 ** (j * np.log2(self.f_max / self.f_min) / self.n_bins)
        edges[0], edges[-1] = self.f_min, self.f_max
        object.__setattr__(self, "edges", edges)

    def bin_of(self, freq: float) -> int | None:
        """Index of the half-open bin holding ``freq``; the last bin includes ``f_max``."""
        if freq == self.f_max:
            return self.n_bins - 1
        if freq < self.f_min or freq > self.f_max:
            return None
        return int(np.searchsorted(self.edges, freq, side="right") - 1)

    def to_dict(self) -> dict:
        return {"n_bins": self.n_bins, "f_min": self.f_min, "f_max": self.f_max}


def bin_edges(n_bins: int = 20, f_min: float = 0.3, f_max: float = 35.0) -> BinScheme:
    return BinScheme(n_bins, f_min, f_max)


@dataclass
class SampleDraw:
    selected_bins: np.ndarray
    phases: np.ndarray  # one per selected bin, shared by all channels
    frequencies: np.ndarray  # [channel, selected bin]


@dataclass
class SyntheticSample:
    signal: np.ndarray  # [3, 3000]
    label: np.ndarray  # [n_bins] of 0/1
    seed_trace: tuple[int, int]
    draw: SampleDraw | None = None


def draw_label(rng: np.random.Generator, n_bins: int = 20) -> np.ndarray:
    """Independent fair coin per bin; an empty selection is redrawn."""
    while True:
        label = (rng.random(n_bins) < 0.5).astype(np.uint8)
        if label.any():
            return label


def generate_sample(
    label: np.ndarray,
    scheme: BinScheme,
    rng: np.random.Generator,
    seed_trace: tuple[int, int] = (-1, -1),
) -> SyntheticSample:
    label = np.asarray(label, dtype=np.uint8)
    if label.shape != (scheme.n_bins,):
        raise ValueError(f"label must have {scheme.n_bins} entries, got shape {label.shape}")
    selected = np.flatnonzero(label)
    if selected.size == 0:
        raise ValueError("label selects no frequency bin")
    phases = rng.uniform(0.0, 2.0 * np.pi, size=selected.size)
    lo = scheme.edges[selected]
    hi = scheme.edges[selected + 1]
    freqs = rng.uniform(lo, hi, size=(N_CHANNELS, selected.size))

    # [channel, bin, time]
    waves = np.sin(2.0 * np.pi * freqs[:, :, None] * _TIME[None, None, :] + phases[None, :, None])
    raw = waves.sum(axis=1)
    mu = raw.mean(axis=1, keepdims=True)
    sigma = raw.std(axis=1, keepdims=True)
    if np.any(sigma < 1e-12):
        raise ValueError("degenerate synthetic channel with zero variance")
    signal = (raw - mu) / sigma
    return SyntheticSample(signal, label, seed_trace, SampleDraw(selected, phases, freqs))


def sample_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index``; order of generation does not matter."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, index]))


def generate_one(index: int, scheme: BinScheme, master_seed: int) -> SyntheticSample:
    rng = sample_rng(master_seed, index)
    label = draw_label(rng, scheme.n_bins)
    return generate_sample(label, scheme, rng, seed_trace=(master_seed, index))


def generate_dataset(
    n_samples: int, scheme: BinScheme | None = None, master_seed: int = 0, start: int = 0
) -> Iterator[SyntheticSample]:
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    scheme = scheme or BinScheme()
    for k in range(start, start + n_samples):
        yield generate_one(k, scheme, master_seed)


def generate_arrays(
    n_samples: int,
    scheme: BinScheme | None = None,
    master_seed: int = 0,
    start: int = 0,
    dtype=np.float32,
) -> tuple[np.ndarray, np.ndarray]:
    """Materialise ``(signals[n, 3, 3000], labels[n, n_bins])``."""
    scheme = scheme or BinScheme()
    signals = np.empty((n_samples, N_CHANNELS, N_TIMESTEPS), dtype=dtype)
    labels = np.empty((n_samples, scheme.n_bins), dtype=np.uint8)
    for i, s in enumerate(generate_dataset(n_samples, scheme, master_seed, start)):
        signals[i] = s.signal
        labels[i] = s.label
    return signals, labels


def train_val_split(n_total: int = 101_000, n_val: int = 1_000) -> tuple[range, range]:
    """Sample indices for training and validation; validation takes the tail."""
    if not 0 < n_val < n_total:
        raise ValueError("need 0 < n_val < n_total")
    return range(0, n_total - n_val), range(n_total - n_val, n_total)


def resample_indices(n_available: int, target_count: int) -> np.ndarray:
    """Cyclic repetition (oversampling) or prefix truncation (undersampling)."""
    if n_available < 1 or target_count < 1:
        raise ValueError("dataset and target must be non-empty")
    return np.arange(target_count) % n_available


def resample_to_count(dataset: Sequence, target_count: int) -> list:
    idx = resample_indices(len(dataset), target_count)
    return [dataset[i] for i in idx]


# -- shard export -----------------------------------------------------------

def export_shards(
    out_dir: str | Path,
    count: int,
    seed: int,
    scheme: BinScheme | None = None,
    shard_size: int = 10_000,
) -> list[Path]:
    scheme = scheme or BinScheme()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for shard, start in enumerate(range(0, count, shard_size)):
        n = min(shard_size, count - start)
        signals, labels = generate_arrays(n, scheme, seed, start=start)
        header = {
            "kind": "synthetic",
            "count": n,
            "shape": [N_CHANNELS, N_TIMESTEPS],
            "bin_scheme": scheme.to_dict(),
            "seed": seed,
            "start_index": start,
        }
        path = out_dir / f"synthetic-{shard:05d}.shard"
        write_shard(path, signals, labels, header)
        paths.append(path)
    (out_dir / "index.json").write_text(json.dumps({"count": count, "seed": seed, "shards": [p.name for p in paths]}))
    return paths
