"""EDF reading/writing, hypnogram handling and epoch extraction.

Only plain EDF is handled: a 256-byte fixed header, 256 bytes per signal,
then data records of little-endian int16 samples. Hypnograms come from
CSV sidecars (``epoch_index,stage``), one file per scorer.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp
from .epochs import EpochRecord, EpochSet

log = logging.getLogger(__name__)

EPOCH_SECONDS = 30
TARGET_RATE = 100.0
EPOCH_SAMPLES = int(EPOCH_SECONDS * TARGET_RATE)

# Stage codes: the five scored stages first, then codes that are dropped.
W, N1, N2, N3, REM, ARTIFACT, MOVEMENT, UNKNOWN = range(8)
STAGE_NAMES = ("W", "N1", "N2", "N3", "REM", "ARTIFACT", "MOVEMENT", "UNKNOWN")
SLEEP_STAGES = frozenset({N1, N2, N3, REM})
STAGE_TOKENS = {
    "W": W,
    "N1": N1,
    "N2": N2,
    "N3": N3,
    "N4": N3,
    "REM": REM,
    "R": REM,
    "ART": ARTIFACT,
    "MOV": MOVEMENT,
    "UNK": UNKNOWN,
}

_FIXED_FIELDS = (
    ("version", 8),
    ("patient", 80),
    ("recording", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
)
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


class EdfError(ValueError):
    """Parse failure with the byte offset and header field involved."""

    def __init__(self, message: str, offset: int | None = None, field: str | None = None):
        self.offset = offset
        self.field = field
        where = []
        if field:
            where.append(f"field {field!r}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass
class SignalHeader:
    label: str
    transducer: str = ""
    dimension: str = "uV"
    physical_min: float = -1000.0
    physical_max: float = 1000.0
    digital_min: int = -32768
    digital_max: int = 32767
    prefiltering: str = ""
    samples_per_record: int = 100

    def to_physical(self, digital: np.ndarray) -> np.ndarray:
        gain = (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)
        return self.physical_min + (np.asarray(digital, dtype=np.float64) - self.digital_min) * gain

    def to_digital(self, physical: np.ndarray) -> np.ndarray:
        gain = (self.digital_max - self.digital_min) / (self.physical_max - self.physical_min)
        d = np.round(self.digital_min + (np.asarray(physical, dtype=np.float64) - self.physical_min) * gain)
        return np.clip(d, self.digital_min, self.digital_max).astype(np.int16)


@dataclass
class EdfHeader:
    version: str = "0"
    patient: str = ""
    recording: str = ""
    start_date: str = "01.01.00"
    start_time: str = "00.00.00"
    header_bytes: int = 0
    n_records: int = 0
    record_duration: float = 1.0
    n_signals: int = 0
    signals: list[SignalHeader] = field(default_factory=list)

    def sample_rate(self, i: int) -> float:
        return self.signals[i].samples_per_record / self.record_duration


@dataclass
class EdfRecording:
    header: EdfHeader
    digital: list[np.ndarray]

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.header.signals]

    def physical(self, i: int) -> np.ndarray:
        return self.header.signals[i].to_physical(self.digital[i])

    def channel(self, label: str) -> dsp.ChannelSignal:
        try:
            i = self.labels.index(label)
        except ValueError:
            raise KeyError(f"channel {label!r} not in recording (have {self.labels})") from None
        return dsp.ChannelSignal(self.physical(i), self.header.sample_rate(i), label)


# -- parsing ----------------------------------------------------------------

def _text(raw: bytes, offset: int, width: int, name: str) -> str:
    chunk = raw[offset : offset + width]
    if len(chunk) < width:
        raise EdfError("file ends inside the header", offset, name)
    try:
        return chunk.decode("ascii").strip()
    except UnicodeDecodeError:
        raise EdfError("non-ASCII header text", offset, name) from None


def _number(raw: bytes, offset: int, width: int, name: str, kind=float):
    text = _text(raw, offset, width, name)
    try:
        return kind(text)
    except ValueError:
        raise EdfError(f"non-numeric value {text!r}", offset, name) from None


def parse_edf(raw: bytes) -> EdfRecording:
    """Decode an EDF byte string into header and per-signal digital samples."""
    pos = 0
    fixed = {}
    for name, width in _FIXED_FIELDS:
        if name in ("header_bytes", "n_records", "n_signals"):
            fixed[name] = _number(raw, pos, width, name, int)
        elif name == "record_duration":
            fixed[name] = _number(raw, pos, width, name, float)
        else:
            fixed[name] = _text(raw, pos, width, name)
        pos += width
    ns = fixed["n_signals"]
    if ns < 1:
        raise EdfError(f"n_signals must be positive, got {ns}", 252, "n_signals")
    expected = 256 * (1 + ns)
    if fixed["header_bytes"] != expected:
        raise EdfError(
            f"header_bytes is {fixed['header_bytes']} but 256*(1+{ns}) = {expected}", 184, "header_bytes"
        )
    if fixed["record_duration"] <= 0:
        raise EdfError("record duration must be positive", 244, "record_duration")

    per_signal: dict[str, list] = {}
    for name, width in _SIGNAL_FIELDS:
        values = []
        for i in range(ns):
            fname = f"{name}[{i}]"
            if name in ("physical_min", "physical_max"):
                values.append(_number(raw, pos, width, fname, float))
            elif name in ("digital_min", "digital_max", "samples_per_record"):
                values.append(_number(raw, pos, width, fname, int))
            else:
                values.append(_text(raw, pos, width, fname))
            pos += width
        per_signal[name] = values

    signals = []
    for i in range(ns):
        sh = SignalHeader(
            label=per_signal["label"][i],
            transducer=per_signal["transducer"][i],
            dimension=per_signal["dimension"][i],
            physical_min=per_signal["physical_min"][i],
            physical_max=per_signal["physical_max"][i],
            digital_min=per_signal["digital_min"][i],
            digital_max=per_signal["digital_max"][i],
            prefiltering=per_signal["prefiltering"][i],
            samples_per_record=per_signal["samples_per_record"][i],
        )
        if sh.digital_min >= sh.digital_max:
            raise EdfError(f"signal {i}: digital_min must be below digital_max", None, f"digital_min[{i}]")
        if sh.physical_min == sh.physical_max:
            raise EdfError(f"signal {i}: physical_min equals physical_max", None, f"physical_min[{i}]")
        if sh.samples_per_record < 1:
            raise EdfError(f"signal {i}: samples_per_record must be positive", None, f"samples_per_record[{i}]")
        signals.append(sh)

    record_samples = sum(s.samples_per_record for s in signals)
    record_bytes = 2 * record_samples
    data_bytes = len(raw) - expected
    n_records = fixed["n_records"]
    if n_records == -1:
        n_records = data_bytes // record_bytes
    if n_records < 0:
        raise EdfError(f"invalid record count {n_records}", 236, "n_records")
    needed = n_records * record_bytes
    if data_bytes < needed:
        raise EdfError(
            f"truncated data: {n_records} records need {needed} bytes, found {data_bytes}",
            expected + (data_bytes // record_bytes) * record_bytes,
            "data_records",
        )
    if data_bytes % record_bytes:
        log.warning("EDF has %d trailing bytes after the last record", data_bytes - needed)

    data = np.frombuffer(raw, dtype="<i2", count=n_records * record_samples, offset=expected)
    data = data.reshape(n_records, record_samples)
    digital = []
    start = 0
    for sh in signals:
        stop = start + sh.samples_per_record
        digital.append(np.ascontiguousarray(data[:, start:stop]).reshape(-1))
        start = stop

    header = EdfHeader(
        version=fixed["version"],
        patient=fixed["patient"],
        recording=fixed["recording"],
        start_date=fixed["start_date"],
        start_time=fixed["start_time"],
        header_bytes=fixed["header_bytes"],
        n_records=n_records,
        record_duration=fixed["record_duration"],
        n_signals=ns,
        signals=signals,
    )
    return EdfRecording(header, digital)


def read_edf(path: str | Path) -> EdfRecording:
    return parse_edf(Path(path).read_bytes())


# -- writing ----------------------------------------------------------------

def _field(value, width: int) -> bytes:
    if isinstance(value, float):
        text = repr(value) if len(repr(value)) <= width else f"{value:.{max(width - 6, 1)}g}"
    else:
        text = str(value)
    encoded = text.encode("ascii")
    if len(encoded) > width:
        raise ValueError(f"value {text!r} does not fit in {width} header bytes")
    return encoded.ljust(width, b" ")


def _num(value) -> int | float:
    return int(value) if float(value).is_integer() else float(value)


def write_edf(
    path: str | Path | None,
    signal_headers: Sequence[SignalHeader],
    digital: Sequence[np.ndarray],
    record_duration: float = 1.0,
    patient: str = "X X X X",
    recording: str = "Startdate X X X X",
) -> bytes:
    """Serialise digital samples; returns the bytes and writes them if ``path`` is given."""
    ns = len(signal_headers)
    n_records = None
    for sh, d in zip(signal_headers, digital, strict=True):
        if len(d) % sh.samples_per_record:
            raise ValueError(f"signal {sh.label!r}: length {len(d)} is not a whole number of records")
        count = len(d) // sh.samples_per_record
        if n_records is not None and count != n_records:
            raise ValueError("signals disagree on the number of data records")
        n_records = count
    parts = [
        _field("0", 8),
        _field(patient, 80),
        _field(recording, 80),
        _field("01.01.00", 8),
        _field("00.00.00", 8),
        _field(256 * (1 + ns), 8),
        _field("", 44),
        _field(n_records, 8),
        _field(_num(record_duration), 8),
        _field(ns, 4),
    ]
    for attr, width in _SIGNAL_FIELDS:
        for sh in signal_headers:
            value = "" if attr == "reserved" else getattr(sh, attr)
            if attr in ("physical_min", "physical_max"):
                value = _num(value)
            parts.append(_field(value, width))
    blocks = [np.asarray(d, dtype="<i2").reshape(n_records, sh.samples_per_record) for sh, d in zip(signal_headers, digital)]
    parts.append(np.concatenate(blocks, axis=1).astype("<i2").tobytes())
    raw = b"".join(parts)
    if path is not None:
        Path(path).write_bytes(raw)
    return raw


# -- hypnograms -------------------------------------------------------------

@dataclass
class Hypnogram:
    stages: np.ndarray  # int codes, see STAGE_NAMES
    scorer: str = ""
    epoch_duration: int = EPOCH_SECONDS

    def __len__(self) -> int:
        return len(self.stages)


def parse_stage(token: str) -> int:
    key = token.strip().upper()
    if key not in STAGE_TOKENS:
        raise ValueError(f"unknown sleep stage token {token!r}")
    return STAGE_TOKENS[key]


def read_hypnogram_csv(path: str | Path, scorer: str | None = None) -> Hypnogram:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None or [h.strip() for h in head[:2]] != ["epoch_index", "stage"]:
            raise ValueError(f"{path}: expected header row 'epoch_index,stage'")
        rows = [(int(r[0]), parse_stage(r[1])) for r in reader if r]
    rows.sort()
    indices = [i for i, _ in rows]
    if indices != list(range(len(rows))):
        raise ValueError(f"{path}: epoch indices must be contiguous from 0")
    return Hypnogram(np.array([s for _, s in rows], dtype=np.int64), scorer or Path(path).stem)


def write_hypnogram_csv(path: str | Path, hypnogram: Hypnogram) -> None:
    tokens = {W: "W", N1: "N1", N2: "N2", N3: "N3", REM: "REM", ARTIFACT: "ART", MOVEMENT: "MOV", UNKNOWN: "UNK"}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch_index", "stage"])
        for i, s in enumerate(hypnogram.stages):
            writer.writerow([i, tokens[int(s)]])


def scorer_reliability(hypnograms: Sequence[Hypnogram]) -> np.ndarray:
    """Mean epoch-wise agreement of each scorer with every other scorer."""
    k = len(hypnograms)
    if k == 1:
        return np.ones(1)
    votes = np.stack([h.stages for h in hypnograms])
    agree = (votes[:, None, :] == votes[None, :, :]).mean(axis=2)
    return (agree.sum(axis=1) - 1.0) / (k - 1)


def merge_consensus(hypnograms: Sequence[Hypnogram], reliability_order: Sequence[int] | None = None) -> Hypnogram:
    """Majority vote per epoch; ties go to the most reliable scorer voting for a tied stage.

    ``reliability_order`` lists scorer positions from most to least
    reliable; when omitted it is ranked by :func:`scorer_reliability`
    (ties in reliability resolved by scorer position).
    """
    if not hypnograms:
        raise ValueError("merge_consensus needs at least one hypnogram")
    lengths = {len(h) for h in hypnograms}
    if len(lengths) != 1:
        raise ValueError(f"hypnograms differ in length: {sorted(lengths)}")
    if len(hypnograms) == 1:
        return Hypnogram(hypnograms[0].stages.copy(), hypnograms[0].scorer)
    if reliability_order is None:
        rel = scorer_reliability(hypnograms)
        reliability_order = sorted(range(len(hypnograms)), key=lambda i: (-rel[i], i))
    votes = np.stack([h.stages for h in hypnograms])
    out = np.empty(votes.shape[1], dtype=np.int64)
    for e in range(votes.shape[1]):
        column = votes[:, e]
        values, counts = np.unique(column, return_counts=True)
        tied = set(values[counts == counts.max()].tolist())
        if len(tied) == 1:
            out[e] = tied.pop()
            continue
        for scorer in reliability_order:
            if int(column[scorer]) in tied:
                out[e] = column[scorer]
                break
    return Hypnogram(out, "consensus")


def crop_to_sleep_period(n_epochs: int, hypnogram: Hypnogram, margin_epochs: int = 60) -> slice:
    """Epoch slice from ``margin`` before the first to ``margin`` after the last sleep epoch."""
    sleep = np.flatnonzero(np.isin(hypnogram.stages, list(SLEEP_STAGES)))
    if sleep.size == 0:
        raise ValueError(f"hypnogram {hypnogram.scorer!r} has no non-Wake sleep epochs")
    start = max(0, int(sleep[0]) - margin_epochs)
    stop = min(n_epochs, len(hypnogram), int(sleep[-1]) + margin_epochs + 1)
    return slice(start, stop)


def preprocess_channel(sig: dsp.ChannelSignal, lo: float = 0.3, hi: float = 35.0, order: int = 8) -> np.ndarray:
    """Band-pass then resample to 100 Hz (skipped when already at 100 Hz)."""
    filtered = dsp.butter_bandpass_zero_phase(sig, lo, hi, order)
    return dsp.polyphase_resample(filtered, TARGET_RATE).samples


def build_epochs(
    recording: EdfRecording,
    hypnogram: Hypnogram,
    channel_map: Sequence[str],
    subject_id: str,
    recording_id: str,
    crop: bool = False,
    filter_band: tuple[float, float] = (0.3, 35.0),
    filter_order: int = 8,
) -> list[EpochRecord]:
    """Cut a recording into normalised, clipped 3x3000 epochs with stage labels.

    Epochs scored as artifact, movement or unknown are dropped; trailing
    signal shorter than a full epoch is discarded.
    """
    if len(channel_map) != 3:
        raise ValueError(f"channel_map must name 3 channels, got {list(channel_map)}")
    channels = []
    for label in channel_map:
        if label not in recording.labels:
            raise KeyError(f"requested channel {label!r} missing from recording {recording_id} (have {recording.labels})")
        channels.append(preprocess_channel(recording.channel(label), *filter_band, order=filter_order))
    n_samples = min(len(c) for c in channels)
    n_epochs = min(n_samples // EPOCH_SAMPLES, len(hypnogram))
    if n_epochs < len(hypnogram):
        log.info("%s: hypnogram has %d epochs, signal covers %d", recording_id, len(hypnogram), n_epochs)
    window = crop_to_sleep_period(n_epochs, hypnogram) if crop else slice(0, n_epochs)
    stacked = np.stack([c[: n_epochs * EPOCH_SAMPLES] for c in channels])
    records = []
    for e in range(window.start, window.stop):
        stage = int(hypnogram.stages[e])
        if stage not in (W, N1, N2, N3, REM):
            continue
        epoch = stacked[:, e * EPOCH_SAMPLES : (e + 1) * EPOCH_SAMPLES]
        epoch = dsp.clip(dsp.epoch_normalize(epoch))
        records.append(EpochRecord(epoch, stage, subject_id, recording_id, e))
    return records


def ingest_directory(
    edf_dir: str | Path,
    hypnogram_dir: str | Path,
    channel_map: Sequence[str],
    crop: bool = False,
    subject_of=None,
    group_of=None,
) -> EpochSet:
    """Process every ``<rec>.edf`` with hypnograms ``<rec>*.csv`` (one per scorer).

    Recordings that fail to parse or lack sleep epochs are skipped with a
    logged diagnostic. ``subject_of`` maps a recording id to a subject id
    (default: identity); ``group_of`` maps a subject id to a group tag.
    """
    edf_dir, hypnogram_dir = Path(edf_dir), Path(hypnogram_dir)
    subject_of = subject_of or (lambda rec: rec)
    sets = []
    groups = {}
    for path in sorted(edf_dir.glob("*.edf")):
        rec_id = path.stem
        scorer_files = sorted(hypnogram_dir.glob(f"{rec_id}*.csv"))
        if not scorer_files:
            log.warning("%s: no hypnogram CSV found, skipped", rec_id)
            continue
        try:
            recording = read_edf(path)
            hyps = [read_hypnogram_csv(p) for p in scorer_files]
            hyp = merge_consensus(hyps)
            subject = subject_of(rec_id)
            records = build_epochs(recording, hyp, channel_map, subject, rec_id, crop=crop)
        except (EdfError, ValueError, KeyError) as exc:
            log.warning("%s: skipped (%s)", rec_id, exc)
            continue
        if group_of is not None:
            groups[subject] = group_of(subject)
        sets.append(EpochSet.from_records(records))
    out = EpochSet.concatenate(sets)
    out.groups = groups or None
    return out
