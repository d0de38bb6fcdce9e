"""Experiment configuration.

Every hyperparameter defaults to the published protocol and can be
overridden from a JSON config file.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..model import INIT_SCHEMES, Architecture

CONFIGURATIONS = ("fully_supervised", "fixed_fe", "finetuned_fe", "untrained_fe")
NEEDS_PRETRAINING = frozenset({"fixed_fe", "finetuned_fe"})
FROZEN_FE = frozenset({"fixed_fe", "untrained_fe"})


@dataclass
class PretrainParams:
    n_train: int = 100_000
    n_val: int = 1_000
    n_synthetic: int | None = None  # distinct samples before resampling to n_train; None = n_train
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    n_bins: int = 20
    f_min: float = 0.3
    f_max: float = 35.0


@dataclass
class FinetuneParams:
    max_epochs: int = 50
    patience: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    clip_norm: float = 5.0
    seq_len: int = 11


@dataclass
class ProxyParams:
    """Synthetic stand-in for a clinical dataset (see :mod:`freqtrain.harness.proxy`)."""

    n_subjects: int = 20
    epochs_per_subject: int = 100
    seed: int = 1234
    groups: tuple[str, ...] = ("A", "B")


@dataclass
class ExperimentSpec:
    configuration: str = "fixed_fe"
    seed: int = 0
    repetition: int = 0
    fold: int = 0
    n_folds: int = 5
    n_subjects: int | None = None
    n_samples: int | None = None
    experiment: str = "default"
    dataset: str = "proxy"  # "proxy" or a directory of epoch-cache shards
    split_path: str | None = None
    n_filters: int = 128
    # scheme for networks that get trained; untrained_fe always draws f as Kaiming normal
    init_scheme: str = "fan_in_uniform"
    pretrain: PretrainParams = field(default_factory=PretrainParams)
    finetune: FinetuneParams = field(default_factory=FinetuneParams)
    proxy: ProxyParams = field(default_factory=ProxyParams)

    def __post_init__(self):
        if self.configuration not in CONFIGURATIONS:
            raise ValueError(f"configuration must be one of {CONFIGURATIONS}, got {self.configuration!r}")
        if not 0 <= self.fold < self.n_folds:
            raise ValueError(f"fold must be in [0, {self.n_folds}), got {self.fold}")
        if not 0 <= self.repetition < 3:
            raise ValueError(f"repetition must be in [0, 3), got {self.repetition}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"init_scheme must be one of {INIT_SCHEMES}, got {self.init_scheme!r}")

    @property
    def architecture(self) -> Architecture:
        return Architecture(
            n_filters=self.n_filters,
            n_bins=self.pretrain.n_bins,
            seq_len=self.finetune.seq_len,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["proxy"]["groups"] = list(self.proxy.groups)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        nested = {"pretrain": PretrainParams, "finetune": FinetuneParams, "proxy": ProxyParams}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                sub = dict(d[key])
                bad = set(sub) - {f.name for f in fields(typ)}
                if bad:
                    raise ValueError(f"unknown {key} keys: {sorted(bad)}")
                if key == "proxy" and "groups" in sub:
                    sub["groups"] = tuple(sub["groups"])
                d[key] = typ(**sub)
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_(self, **changes) -> "ExperimentSpec":
        return replace(self, **changes)

    def run_id(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def pretrain_key(self) -> str:
        """Identifies the pretraining run; shared by every configuration that needs it."""
        d = {
            "seed": self.seed,
            "repetition": self.repetition,
            "fold": self.fold,
            "n_filters": self.n_filters,
            "init_scheme": self.init_scheme,
            "pretrain": asdict(self.pretrain),
        }
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def derive_seed(*keys) -> np.random.SeedSequence:
    """Seed stream for a purpose, e.g. ``derive_seed(seed, repetition, fold, "subsample")``."""
    ints = []
    for k in keys:
        if isinstance(k, str):
            ints.append(int.from_bytes(hashlib.sha256(k.encode()).digest()[:4], "little"))
        else:
            ints.append(int(k))
    return np.random.SeedSequence(ints)


def rng_for(*keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))


def int_seed(*keys) -> int:
    return int(derive_seed(*keys).generate_state(1)[0])


def results_root(default: str | Path = "results") -> Path:
    return Path(os.environ.get("FREQTRAIN_RESULTS", default))
