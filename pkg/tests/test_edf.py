import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqtrain.edf import (
    MOVEMENT,
    N1,
    N2,
    N3,
    REM,
    W,
    EdfError,
    Hypnogram,
    SignalHeader,
    build_epochs,
    crop_to_sleep_period,
    ingest_directory,
    merge_consensus,
    parse_edf,
    parse_stage,
    read_hypnogram_csv,
    write_edf,
    write_hypnogram_csv,
)

LABELS = ("C3-M2", "F3-M2", "EOG1")


def fixture_bytes(seconds=4, rate=100, seed=0):
    rng = np.random.default_rng(seed)
    headers = [SignalHeader(label, samples_per_record=rate) for label in LABELS]
    digital = [rng.integers(-32768, 32768, size=seconds * rate).astype(np.int16) for _ in LABELS]
    return write_edf(None, headers, digital), headers, digital


def test_round_trip_bit_exact():
    raw, headers, digital = fixture_bytes()
    rec = parse_edf(raw)
    assert rec.labels == list(LABELS)
    assert rec.header.header_bytes == 256 * 4
    assert rec.header.n_records == 4
    for got, want in zip(rec.digital, digital):
        np.testing.assert_array_equal(got, want)


def test_physical_conversion_affine():
    raw, headers, digital = fixture_bytes()
    rec = parse_edf(raw)
    for i, h in enumerate(headers):
        expected = h.physical_min + (digital[i].astype(float) - h.digital_min) * (
            (h.physical_max - h.physical_min) / (h.digital_max - h.digital_min)
        )
        np.testing.assert_allclose(rec.physical(i), expected, atol=1e-9, rtol=0)
    sh = SignalHeader("x")
    assert sh.to_physical(np.array([0]))[0] == pytest.approx(0.01526, abs=1e-5)
    assert sh.to_physical(np.array([sh.digital_min]))[0] == sh.physical_min


@settings(max_examples=50, deadline=None)
@given(d=st.integers(-32768, 32767))
def test_physical_conversion_invertible(d):
    sh = SignalHeader("x")
    assert int(sh.to_digital(sh.to_physical(np.array([d])))[0]) == d


def test_sample_rates_per_signal():
    headers = [SignalHeader("a", samples_per_record=250), SignalHeader("b", samples_per_record=100)]
    digital = [np.zeros(500, dtype=np.int16), np.zeros(200, dtype=np.int16)]
    rec = parse_edf(write_edf(None, headers, digital, record_duration=1.0))
    assert rec.header.sample_rate(0) == 250 and rec.header.sample_rate(1) == 100


def test_wrong_header_bytes_rejected():
    raw = bytearray(fixture_bytes()[0])
    raw[184:192] = b"512     "
    with pytest.raises(EdfError) as info:
        parse_edf(bytes(raw))
    assert info.value.field == "header_bytes" and info.value.offset == 184


def test_truncated_records_rejected():
    raw = fixture_bytes()[0]
    with pytest.raises(EdfError) as info:
        parse_edf(raw[:-10])
    assert info.value.field == "data_records"
    assert info.value.offset is not None


def test_truncated_header_rejected():
    raw = fixture_bytes()[0]
    with pytest.raises(EdfError):
        parse_edf(raw[:300])


def test_non_numeric_field_rejected():
    raw = bytearray(fixture_bytes()[0])
    raw[236:244] = b"abc     "
    with pytest.raises(EdfError) as info:
        parse_edf(bytes(raw))
    assert info.value.field == "n_records" and info.value.offset == 236


def test_digital_range_checked():
    headers = [SignalHeader("a", digital_min=5, digital_max=5)]
    raw = write_edf(None, headers, [np.zeros(100, dtype=np.int16)])
    with pytest.raises(EdfError, match="digital_min"):
        parse_edf(raw)


def test_stage_tokens():
    assert parse_stage("N4") == N3
    assert parse_stage("rem") == REM
    with pytest.raises(ValueError):
        parse_stage("S5")


def test_hypnogram_csv_round_trip(tmp_path):
    hyp = Hypnogram(np.array([W, N1, N2, N3, REM, MOVEMENT]), "s1")
    write_hypnogram_csv(tmp_path / "r.csv", hyp)
    back = read_hypnogram_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(back.stages, hyp.stages)


def _h(stages, scorer=""):
    return Hypnogram(np.array(stages), scorer)


def test_consensus_examples():
    votes = [N2, N2, N1, N2, W]
    hyps = [_h([v], f"s{i}") for i, v in enumerate(votes)]
    assert merge_consensus(hyps).stages[0] == N2
    single = _h([W, N1, N2])
    np.testing.assert_array_equal(merge_consensus([single]).stages, single.stages)
    tie = [_h([N1]), _h([N2])]
    assert merge_consensus(tie, reliability_order=[1, 0]).stages[0] == N2
    assert merge_consensus(tie, reliability_order=[0, 1]).stages[0] == N1
    with pytest.raises(ValueError):
        merge_consensus([])


def test_consensus_computed_reliability():
    # scorer 2 agrees with both others most often, so it breaks the tie
    a = _h([W, N1, N2, N3])
    b = _h([W, N2, N2, REM])
    c = _h([W, N1, N3, N3])
    out = merge_consensus([a, b, c])
    np.testing.assert_array_equal(out.stages[:2], [W, N1])


@settings(max_examples=30, deadline=None)
@given(stages=st.lists(st.integers(0, 4), min_size=1, max_size=20), k=st.sampled_from([1, 3, 5]))
def test_unanimous_consensus(stages, k):
    hyps = [_h(stages) for _ in range(k)]
    np.testing.assert_array_equal(merge_consensus(hyps).stages, stages)


def test_crop_examples():
    stages = np.zeros(1000, dtype=int)
    stages[100] = N2
    stages[800] = N2
    window = crop_to_sleep_period(1000, _h(stages))
    assert (window.start, window.stop - 1) == (40, 860)
    stages = np.zeros(100, dtype=int)
    stages[10] = N1
    assert crop_to_sleep_period(100, _h(stages)).start == 0
    with pytest.raises(ValueError):
        crop_to_sleep_period(10, _h(np.zeros(10, dtype=int)))


def _recording(minutes=10, rate=250, seed=0):
    rng = np.random.default_rng(seed)
    n = minutes * 60 * rate
    headers, digital = [], []
    for label in LABELS + ("EMG",):
        h = SignalHeader(label, samples_per_record=rate)
        headers.append(h)
        digital.append(h.to_digital(rng.standard_normal(n) * 50))
    return parse_edf(write_edf(None, headers, digital))


def test_build_epochs_counts_and_shapes():
    rec = _recording()
    stages = np.array([W, N1, N2, N3, REM] * 4)
    epochs = build_epochs(rec, _h(stages), LABELS, "subj", "rec")
    assert len(epochs) == 20
    for e in epochs:
        assert e.signal.shape == (3, 3000)
        assert np.all(np.abs(e.signal) <= 20)
    assert [e.stage for e in epochs] == stages.tolist()


def test_build_epochs_drops_movement_and_counts():
    rec = _recording()
    stages = np.array([W, N1, MOVEMENT, N3, REM] * 4)
    epochs = build_epochs(rec, _h(stages), LABELS, "subj", "rec")
    assert len(epochs) == 16
    assert all(e.index % 5 != 2 for e in epochs)
    assert len(epochs) + int(np.sum(stages == MOVEMENT)) == len(stages)


def test_build_epochs_missing_channel():
    rec = _recording(minutes=1)
    with pytest.raises(KeyError, match="O1-M2"):
        build_epochs(rec, _h([W, W]), ("C3-M2", "O1-M2", "EOG1"), "s", "r")


def test_ingest_directory_skips_broken(tmp_path, caplog):
    edf_dir = tmp_path / "edf"
    hyp_dir = tmp_path / "hyp"
    edf_dir.mkdir()
    hyp_dir.mkdir()
    rec = _recording(minutes=2)
    headers = rec.header.signals
    write_edf(edf_dir / "good.edf", headers, rec.digital)
    write_hypnogram_csv(hyp_dir / "good-s1.csv", _h([W, N1, N2, REM]))
    (edf_dir / "broken.edf").write_bytes(b"0" * 100)
    write_hypnogram_csv(hyp_dir / "broken-s1.csv", _h([W]))
    epochs = ingest_directory(edf_dir, hyp_dir, LABELS)
    assert len(epochs) == 4
    assert set(epochs.recording_ids.tolist()) == {"good"}
    assert "broken" in caplog.text
