"""Dataset-free stand-in for a sleep-staging corpus.

NOT physiological. Each synthetic "subject" gets one recording whose
pseudo-hypnogram follows a sticky Markov chain over the five stages.
Every epoch is a sine mixture in which the stage decides how likely each
of the 20 pretraining frequency bins is to contribute:

* W   -- fast bands (8.4-13.5 Hz and > 17 Hz); slow activity on the EOG channel
* N1  -- theta-like mid band (4.1-8.4 Hz)
* N2  -- mid band plus a 10.7-13.5 Hz spindle-like bin
* N3  -- slow bands (0.38-2.0 Hz) dominate
* REM -- 2.5-5.2 Hz plus some fast activity; slow EOG activity

Amplitudes vary per sine, white noise is added, and epochs go through the
same median/IQR normalisation and clipping as real recordings.
"""

from __future__ import annotations

import numpy as np

from .. import dsp
from ..epochs import EpochSet
from ..synthgen import N_TIMESTEPS, SAMPLE_RATE, BinScheme
from .config import ProxyParams

BASE_PROB = 0.1
NOISE_STD = 0.3

# stage -> {bin: probability} for the two EEG channels and the EOG channel
_EEG_PROFILE = {
    0: {14: 0.8, 15: 0.8, 17: 0.6, 18: 0.6, 19: 0.6},
    1: {11: 0.7, 12: 0.7, 13: 0.7, 14: 0.3},
    2: {11: 0.6, 12: 0.6, 15: 0.8, 4: 0.3, 5: 0.3},
    3: {1: 0.8, 2: 0.8, 3: 0.8, 4: 0.8, 5: 0.8, 6: 0.8, 7: 0.5},
    4: {9: 0.7, 10: 0.7, 11: 0.7, 17: 0.4, 18: 0.4},
}
_EOG_EXTRA = {
    0: {0: 0.7, 1: 0.7, 2: 0.7, 3: 0.7},
    4: {1: 0.8, 2: 0.8, 3: 0.8, 4: 0.8},
}

# sticky transitions; rows are the current stage
_TRANSITIONS = np.array(
    [
        [0.90, 0.08, 0.01, 0.00, 0.01],
        [0.05, 0.80, 0.13, 0.00, 0.02],
        [0.02, 0.03, 0.85, 0.07, 0.03],
        [0.01, 0.00, 0.09, 0.90, 0.00],
        [0.03, 0.04, 0.05, 0.00, 0.88],
    ]
)


def stage_bin_probabilities(stage: int, channel: int, n_bins: int = 20) -> np.ndarray:
    probs = np.full(n_bins, BASE_PROB)
    for b, p in _EEG_PROFILE[stage].items():
        probs[b] = p
    if channel == 2:
        for b, p in _EOG_EXTRA.get(stage, {}).items():
            probs[b] = max(probs[b], p)
    return probs


def pseudo_hypnogram(n_epochs: int, rng: np.random.Generator) -> np.ndarray:
    """Markov chain starting awake; redrawn until all five stages appear."""
    for _ in range(1000):
        stages = np.empty(n_epochs, dtype=np.int64)
        stages[0] = 0
        for i in range(1, n_epochs):
            stages[i] = rng.choice(5, p=_TRANSITIONS[stages[i - 1]])
        if len(np.unique(stages)) == 5:
            return stages
    raise RuntimeError("could not draw a hypnogram covering all stages")


def proxy_epoch(stage: int, rng: np.random.Generator, scheme: BinScheme | None = None) -> np.ndarray:
    scheme = scheme or BinScheme()
    t = np.arange(N_TIMESTEPS) / SAMPLE_RATE
    out = np.empty((3, N_TIMESTEPS))
    for c in range(3):
        probs = stage_bin_probabilities(stage, c, scheme.n_bins)
        chosen = np.flatnonzero(rng.random(scheme.n_bins) < probs)
        if chosen.size == 0:
            chosen = np.array([int(np.argmax(probs))])
        freqs = rng.uniform(scheme.edges[chosen], scheme.edges[chosen + 1])
        amps = rng.uniform(0.5, 1.5, size=chosen.size)
        phases = rng.uniform(0, 2 * np.pi, size=chosen.size)
        x = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)
        out[c] = x + NOISE_STD * rng.standard_normal(N_TIMESTEPS)
    return dsp.clip(dsp.epoch_normalize(out))


def make_proxy_dataset(params: ProxyParams | None = None) -> EpochSet:
    params = params or ProxyParams()
    root = np.random.SeedSequence(params.seed)
    signals, stages, subjects, recordings, indices = [], [], [], [], []
    groups = {}
    for s, child in enumerate(root.spawn(params.n_subjects)):
        rng = np.random.default_rng(child)
        sid = f"proxy{s:03d}"
        groups[sid] = params.groups[s % len(params.groups)]
        hyp = pseudo_hypnogram(params.epochs_per_subject, rng)
        for i, stage in enumerate(hyp):
            signals.append(proxy_epoch(int(stage), rng).astype(np.float32))
            stages.append(int(stage))
            subjects.append(sid)
            recordings.append(f"{sid}-r0")
            indices.append(i)
    return EpochSet(
        np.stack(signals),
        np.array(stages, dtype=np.int64),
        np.array(subjects),
        np.array(recordings),
        np.array(indices, dtype=np.int64),
        groups,
    )
