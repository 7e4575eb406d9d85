from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from leakhmm.errors import InvalidInputError, ParseError
from leakhmm.features import (
    FrequencyWindow,
    ObservationSequence,
    Waveform,
    damage_index_freq,
    damage_index_time,
    extract_sequence,
    extract_windowed,
    read_features,
    read_waveform,
    window_count,
    write_features,
    write_waveform,
)


def dft_peak(x, fs, f_start, f_stop):
    """Peak of the 2/N-scaled DFT magnitude by explicit summation."""
    n = len(x)
    t = np.arange(n)
    best = 0.0
    for k in range(n // 2 + 1):
        f = k * fs / n
        if f_start <= f <= f_stop:
            X = np.sum(x * np.exp(-2j * np.pi * k * t / n))
            best = max(best, abs(X) * 2 / n)
    return best


signals = arrays(
    np.float64, st.integers(8, 64),
    elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False),
).filter(lambda x: np.ptp(x) > 1e-3 * max(1.0, np.abs(x).max()))


# -- DI1 ---------------------------------------------------------------------


def test_di1_identical_is_zero():
    s = np.sin(np.linspace(0, 7, 300)) + 0.1 * np.arange(300)
    assert damage_index_time(s, s) == pytest.approx(0.0, abs=1e-12)


def test_di1_negated_is_zero():
    s = np.random.default_rng(0).normal(size=500)
    assert damage_index_time(s, -s) == pytest.approx(0.0, abs=1e-12)


def test_di1_sine_cosine_full_period():
    t = np.arange(1000) / 1000
    s, c = np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)
    rho = np.sum((s - s.mean()) * (c - c.mean())) / np.sqrt(
        np.sum((s - s.mean()) ** 2) * np.sum((c - c.mean()) ** 2)
    )
    assert abs(rho) < 1e-6
    assert damage_index_time(s, c) == pytest.approx(1.0, abs=1e-6)


def test_di1_accepts_waveforms():
    w = Waveform(np.arange(10.0), 10.0)
    assert damage_index_time(w, w.scaled(-2.0, 5.0)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    "a, b",
    [
        (np.arange(5.0), np.arange(6.0)),
        (np.ones(10), np.arange(10.0)),
        (np.arange(10.0), np.zeros(10)),
        (np.array([1.0]), np.array([2.0])),
    ],
)
def test_di1_rejects_bad_input(a, b):
    with pytest.raises(InvalidInputError):
        damage_index_time(a, b)


@settings(max_examples=60, deadline=None)
@given(signals, st.data())
def test_di1_symmetric_and_invariant(x, data):
    y = data.draw(arrays(np.float64, x.size, elements=st.floats(-1e3, 1e3)))
    if np.ptp(y) <= 1e-3 * max(1.0, np.abs(y).max()):
        y = y + np.arange(y.size)
    d = damage_index_time(x, y)
    assert 0.0 <= d <= 1.0
    assert damage_index_time(y, x) == pytest.approx(d, abs=1e-9)
    scale = data.draw(st.floats(1e-2, 1e2))
    shift = data.draw(st.floats(-1e3, 1e3))
    assert damage_index_time(x * scale + shift, y) == pytest.approx(d, abs=1e-9)
    assert damage_index_time(-x, y) == pytest.approx(d, abs=1e-9)
    assert damage_index_time(x, -y) == pytest.approx(d, abs=1e-9)


# -- DI2 ---------------------------------------------------------------------


def test_di2_zero_waveform():
    w = Waveform(np.zeros(256), 1000.0)
    assert damage_index_freq(w, FrequencyWindow(10, 200)) == 0.0


def test_di2_in_bin_sinusoid():
    n, fs, a = 1024, 1024.0, 2.7
    f0 = 100 * fs / n
    t = np.arange(n) / fs
    x = a * np.sin(2 * np.pi * f0 * t)
    assert dft_peak(x, fs, 50, 200) == pytest.approx(a, abs=1e-9)
    assert damage_index_freq(Waveform(x, fs), FrequencyWindow(50, 200)) == pytest.approx(a, abs=1e-9)


def test_di2_excludes_larger_peak_outside_window():
    n, fs = 1024, 1024.0
    t = np.arange(n) / fs
    a1, a2 = 0.8, 3.0
    x = a1 * np.sin(2 * np.pi * 100 * t) + a2 * np.sin(2 * np.pi * 300 * t)
    win = FrequencyWindow(50, 200)
    assert dft_peak(x, fs, 50, 200) == pytest.approx(a1, abs=1e-9)
    assert damage_index_freq(Waveform(x, fs), win) == pytest.approx(a1, abs=1e-9)


def test_di2_window_edges_are_inclusive():
    n, fs = 64, 64.0
    x = np.sin(2 * np.pi * 10 * np.arange(n) / fs)
    assert damage_index_freq(Waveform(x, fs), FrequencyWindow(10, 10.5)) == pytest.approx(1.0, abs=1e-12)
    assert damage_index_freq(Waveform(x, fs), FrequencyWindow(9.5, 10)) == pytest.approx(1.0, abs=1e-12)


def test_di2_empty_window_raises():
    w = Waveform(np.ones(10), 10.0)  # bins at 0, 1, ..., 5 Hz
    with pytest.raises(InvalidInputError, match="no DFT bin"):
        damage_index_freq(w, FrequencyWindow(1.2, 1.8))


def test_di2_window_above_nyquist_raises():
    with pytest.raises(InvalidInputError, match="Nyquist"):
        damage_index_freq(Waveform(np.ones(10), 10.0), FrequencyWindow(1, 6))


def test_frequency_window_validation():
    with pytest.raises(InvalidInputError):
        FrequencyWindow(5, 5)
    with pytest.raises(InvalidInputError):
        FrequencyWindow(-1, 5)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.integers(4, 64), elements=st.floats(-100, 100)),
    st.floats(0, 50),
)
def test_di2_homogeneous(x, c):
    w = Waveform(x, 100.0)
    win = FrequencyWindow(0, 50)
    assert damage_index_freq(w.scaled(c), win) == pytest.approx(c * damage_index_freq(w, win), rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, 64, elements=st.floats(-100, 100)),
    st.floats(0, 20), st.floats(1.1, 20), st.floats(0, 10), st.floats(0, 10),
)
def test_di2_widening_never_decreases(x, lo, width, grow_lo, grow_hi):
    w = Waveform(x, 64.0)
    inner = FrequencyWindow(lo, min(lo + width, 32))
    outer = FrequencyWindow(max(0.0, lo - grow_lo), min(inner.f_stop + grow_hi, 32))
    assert damage_index_freq(w, outer) >= damage_index_freq(w, inner)


# -- sequences ---------------------------------------------------------------


def test_extract_sequence_baseline_only():
    t = np.arange(512) / 512
    base = Waveform(np.sin(2 * np.pi * 20 * t) + 0.3 * t, 512.0)
    win = FrequencyWindow(10, 40)
    seq = extract_sequence(base, [base], win)
    assert len(seq) == 1
    assert seq.vectors()[0].di1 == pytest.approx(0.0, abs=1e-12)
    assert seq.vectors()[0].di2 == damage_index_freq(base, win)


def test_extract_sequence_empty_raises():
    with pytest.raises(InvalidInputError):
        extract_sequence(Waveform(np.arange(4.0), 4.0), [], FrequencyWindow(0, 1))


def test_extract_sequence_noise_increases_di1():
    rng = np.random.default_rng(11)
    t = np.arange(2000) / 2000
    base = np.sin(2 * np.pi * 5 * t)
    z = rng.normal(size=t.size)
    recs = [Waveform(base + s * z, 2000.0) for s in (0.0, 0.3, 0.6)]
    seq = extract_sequence(Waveform(base, 2000.0), recs, FrequencyWindow(1, 10))
    di1 = seq.observations[:, 0]
    assert np.all(np.diff(di1) >= 0)


def test_extract_sequence_reports_recording_index():
    base = Waveform(np.arange(8.0), 8.0)
    with pytest.raises(InvalidInputError, match="recording 1"):
        extract_sequence(base, [base, Waveform(np.ones(8), 8.0)], FrequencyWindow(0, 4))


def test_window_count():
    assert window_count(100, 10, 10) == 10
    assert window_count(100_000, 2222, 2222) == 45
    assert window_count(10, 4, 3) == 3
    with pytest.raises(InvalidInputError, match="exceeds"):
        window_count(10, 11, 1)
    with pytest.raises(InvalidInputError):
        window_count(10, 1, 1)


def test_extract_windowed_counts_and_zero_di1():
    rng = np.random.default_rng(2)
    x = Waveform(rng.normal(size=500), 1000.0)
    seq = extract_windowed(x, x, FrequencyWindow(10, 400), 50, 50)
    assert len(seq) == 10
    assert np.allclose(seq.observations[:, 0], 0.0, atol=1e-12)


def test_extract_windowed_length_mismatch():
    with pytest.raises(InvalidInputError):
        extract_windowed(Waveform(np.arange(10.0), 10.0), Waveform(np.arange(12.0), 10.0),
                         FrequencyWindow(0, 5), 5, 5)


# -- files -------------------------------------------------------------------


def test_waveform_round_trip(tmp_path):
    w = Waveform(np.random.default_rng(3).normal(size=100) * 1e-3, 100000.0)
    write_waveform(tmp_path / "w.csv", w)
    r = read_waveform(tmp_path / "w.csv")
    assert r.sample_rate == w.sample_rate
    assert np.array_equal(r.samples, w.samples)


def test_waveform_parse_error_names_line(tmp_path):
    lines = ["sample_rate_hz=100", "1", "2", "3", "4", "5", "oops", "7"]
    (tmp_path / "w.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        read_waveform(tmp_path / "w.csv")
    assert info.value.line == 7
    assert ":7:" in str(info.value)


def test_waveform_bad_header(tmp_path):
    (tmp_path / "w.csv").write_text("1\n2\n")
    with pytest.raises(ParseError):
        read_waveform(tmp_path / "w.csv")


def test_features_round_trip(tmp_path):
    obs = np.random.default_rng(4).random((7, 2)) / 3
    seq = ObservationSequence(obs, labels=[0, 0, 1, 1, 1, 0, 1])
    write_features(tmp_path / "f.csv", seq, ["no_leak", "leak"])
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "di1,di2,label"
    back = read_features(tmp_path / "f.csv", ["no_leak", "leak"])
    assert np.array_equal(back.observations, obs)
    assert np.array_equal(back.labels, seq.labels)


def test_waveform_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        Waveform(np.array([1.0, np.nan]), 10.0)
    with pytest.raises(InvalidInputError):
        Waveform(np.array([1.0, 2.0]), 0.0)
