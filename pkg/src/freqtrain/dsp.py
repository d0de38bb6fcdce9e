"""Biosignal preprocessing: band-pass, resampling, per-epoch normalisation, clipping."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as sps

CLIP_LIMIT = 20.0
KAISER_BETA = 5.0
MAX_RATIO_TERM = 10_000


@dataclass
class ChannelSignal:
    samples: np.ndarray
    sample_rate: float
    label: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"channel {self.label!r} contains non-finite samples")


def butter_bandpass_sos(lo: float, hi: float, sample_rate: float, order: int = 8) -> np.ndarray:
    """Second-order sections of an ``order``-th order Butterworth band-pass.

    A band-pass of total order ``order`` comes from a low-pass prototype of
    order ``order // 2``; scipy pre-warps the edges for the bilinear transform.
    """
    nyquist = sample_rate / 2.0
    if not 0 < lo < hi < nyquist:
        raise ValueError(f"band edges must satisfy 0 < lo < hi < {nyquist} Hz, got lo={lo}, hi={hi}")
    if order < 2 or order % 2:
        raise ValueError(f"band-pass order must be even and >= 2, got {order}")
    return sps.butter(order // 2, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")


def butter_bandpass_zero_phase(
    sig: ChannelSignal, lo: float = 0.3, hi: float = 35.0, order: int = 8
) -> ChannelSignal:
    """Forward-backward band-pass; output has zero phase and the input's length."""
    sos = butter_bandpass_sos(lo, hi, sig.sample_rate, order)
    x = sig.samples
    padlen = min(3 * order, x.size - 1)
    y = sps.sosfiltfilt(sos, x, padtype="even" if padlen > 0 else None, padlen=max(padlen, 0))
    return ChannelSignal(y, sig.sample_rate, sig.label)


def rational_ratio(source_rate: float, target_rate: float) -> tuple[int, int]:
    """``(up, down)`` in lowest terms with ``target/source = up/down``."""
    ratio = Fraction(target_rate).limit_denominator(MAX_RATIO_TERM) / Fraction(source_rate).limit_denominator(
        MAX_RATIO_TERM
    )
    exact = target_rate / source_rate
    if abs(float(ratio) - exact) > 1e-12 * exact:
        raise ValueError(f"rate ratio {target_rate}/{source_rate} is not a small rational number")
    if ratio.numerator > MAX_RATIO_TERM or ratio.denominator > MAX_RATIO_TERM:
        raise ValueError(f"rate ratio {ratio} exceeds {MAX_RATIO_TERM} in numerator or denominator")
    return ratio.numerator, ratio.denominator


def antialias_taps(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for an ``up/down`` polyphase resampler.

    ``10 * max(up, down) + 1`` taps, cutoff at the lower of the two Nyquist
    rates (expressed on the upsampled grid), unit DC gain. ``resample_poly``
    applies the factor ``up`` itself.
    """
    n_taps = 10 * max(up, down) + 1
    cutoff = 1.0 / max(up, down)
    return sps.firwin(n_taps, cutoff, window=("kaiser", KAISER_BETA))


def polyphase_resample(sig: ChannelSignal, target_rate: float = 100.0) -> ChannelSignal:
    up, down = rational_ratio(sig.sample_rate, target_rate)
    if up == down == 1:
        return ChannelSignal(sig.samples.copy(), sig.sample_rate, sig.label)
    y = sps.resample_poly(sig.samples, up, down, window=antialias_taps(up, down))
    return ChannelSignal(y, float(target_rate), sig.label)


def resampled_length(n: int, up: int, down: int) -> int:
    return -(-n * up // down)


def epoch_normalize(epoch: np.ndarray) -> np.ndarray:
    """Per channel ``(x - median) / IQR`` with linear-interpolation quartiles.

    Accepts ``[length]`` or ``[channels, length]``. Channels whose IQR is
    below 1e-12 become zeros.
    """
    x = np.asarray(epoch, dtype=np.float64)
    if x.shape[-1] < 4:
        raise ValueError(f"epoch needs at least 4 samples per channel, got {x.shape[-1]}")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], axis=-1, keepdims=True, method="linear")
    iqr = q3 - q1
    degenerate = iqr < 1e-12
    out = (x - med) / np.where(degenerate, 1.0, iqr)
    return np.where(degenerate, 0.0, out)


def clip(epoch: np.ndarray, limit: float = CLIP_LIMIT) -> np.ndarray:
    return np.clip(epoch, -limit, limit)
