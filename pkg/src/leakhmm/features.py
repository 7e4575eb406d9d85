"""Damage-index features extracted from sensor waveforms.

Two scalar indexes describe how a recorded waveform differs from a baseline:

* ``di1`` -- time domain, ``1 - |rho|`` with ``rho`` the Pearson correlation
  between baseline and comparison.
* ``di2`` -- frequency domain, the peak single-sided DFT amplitude inside a
  frequency window.

The printed source formula for ``di1`` takes the square root of the
covariance ratio without squaring the numerator; that ratio is not the
squared correlation and can be negative.  ``1 - |rho|`` is used instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError, ParseError

_BIN_EDGE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Waveform:
    """Uniformly sampled real-valued signal."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidInputError("waveform samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("waveform samples must be finite")
        if not (np.isfinite(self.sample_rate) and self.sample_rate > 0):
            raise InvalidInputError(f"sample rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def scaled(self, factor: float, offset: float = 0.0) -> "Waveform":
        return Waveform(self.samples * factor + offset, self.sample_rate)


@dataclass(frozen=True)
class FrequencyWindow:
    """Closed frequency band ``[f_start, f_stop]`` in Hz."""

    f_start: float
    f_stop: float

    def __post_init__(self):
        if not (0 <= self.f_start < self.f_stop):
            raise InvalidInputError(
                f"frequency window needs 0 <= f_start < f_stop, got [{self.f_start}, {self.f_stop}]"
            )

    def check(self, sample_rate: float) -> None:
        nyquist = sample_rate / 2
        if self.f_stop > nyquist * (1 + _BIN_EDGE_RTOL):
            raise InvalidInputError(
                f"f_stop={self.f_stop} Hz exceeds the Nyquist frequency {nyquist} Hz"
            )

    def bins(self, n_samples: int, sample_rate: float) -> np.ndarray:
        """Indices k of the one-sided DFT with ``f_start <= k*fs/n <= f_stop``."""
        self.check(sample_rate)
        freqs = np.arange(n_samples // 2 + 1) * (sample_rate / n_samples)
        tol = _BIN_EDGE_RTOL * max(self.f_stop, sample_rate / n_samples)
        mask = (freqs >= self.f_start - tol) & (freqs <= self.f_stop + tol)
        return np.flatnonzero(mask)


class FeatureVector(NamedTuple):
    di1: float
    di2: float


@dataclass(eq=False)
class ObservationSequence:
    """Time-ordered feature vectors, optionally with per-step state labels.

    ``observations`` has shape ``(T, D)``; ``labels`` holds integer state
    indices and is only used for supervised fitting and evaluation.
    """

    observations: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2 or obs.shape[0] == 0:
            raise InvalidInputError("observation sequence must be non-empty with shape (T, D)")
        if not np.all(np.isfinite(obs)):
            raise InvalidInputError("observations must be finite")
        self.observations = obs
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (obs.shape[0],):
                raise InvalidInputError(
                    f"label count {labels.size} does not match observation count {obs.shape[0]}"
                )
            self.labels = labels

    def __len__(self):
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]

    def vectors(self) -> list[FeatureVector]:
        return [FeatureVector(float(a), float(b)) for a, b in self.observations[:, :2]]


def _as_samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    return np.asarray(w, dtype=np.float64)


def pearson_correlation(x, y) -> float:
    x = _as_samples(x)
    y = _as_samples(y)
    if x.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {x.size} vs {y.size} samples")
    if x.size < 2:
        raise InvalidInputError("correlation needs at least 2 samples")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise InvalidInputError("zero-variance waveform: correlation is undefined")
    xc = x - x.mean()
    yc = y - y.mean()
    rho = np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    return float(np.clip(rho, -1.0, 1.0))


def damage_index_time(baseline, comparison) -> float:
    """Time-domain damage index ``1 - |rho|``.

    Parameters
    ----------
    baseline, comparison : Waveform or array_like
        Equal-length signals with nonzero variance.

    Returns
    -------
    float
        Value in ``[0, 1]``; 0 when the signals are perfectly (anti)correlated.
    """
    return 1.0 - abs(pearson_correlation(baseline, comparison))


def amplitude_spectrum(w: Waveform) -> np.ndarray:
    """Single-sided DFT magnitude scaled by ``2/N``."""
    n = w.samples.size
    return np.abs(np.fft.rfft(w.samples)) * (2.0 / n)


def damage_index_freq(w: Waveform, window: FrequencyWindow) -> float:
    """Peak spectral amplitude of ``w`` inside ``window``.

    No taper or detrending is applied. A sinusoid of amplitude ``a`` sitting
    exactly on a DFT bin reads ``a``.
    """
    if w.samples.size < 2:
        raise InvalidInputError("spectral index needs at least 2 samples")
    k = window.bins(w.samples.size, w.sample_rate)
    if k.size == 0:
        raise InvalidInputError(
            f"no DFT bin of a {w.samples.size}-sample record at {w.sample_rate} Hz "
            f"falls in [{window.f_start}, {window.f_stop}] Hz"
        )
    return float(amplitude_spectrum(w)[k].max())


def extract_sequence(
    baseline: Waveform, recordings: Sequence[Waveform], window: FrequencyWindow
) -> ObservationSequence:
    """One ``(di1, di2)`` vector per recording, in input order."""
    if len(recordings) == 0:
        raise InvalidInputError("no recordings given")
    rows = []
    for i, rec in enumerate(recordings):
        try:
            if rec.sample_rate != baseline.sample_rate:
                raise InvalidInputError(
                    f"sample rate {rec.sample_rate} differs from baseline {baseline.sample_rate}"
                )
            rows.append((damage_index_time(baseline, rec), damage_index_freq(rec, window)))
        except InvalidInputError as exc:
            raise InvalidInputError(f"recording {i}: {exc}") from exc
    return ObservationSequence(np.array(rows))


def window_count(n_samples: int, length: int, stride: int) -> int:
    if length < 2 or stride < 1:
        raise InvalidInputError(f"need window length >= 2 and stride >= 1, got {length}/{stride}")
    if length > n_samples:
        raise InvalidInputError(f"window length {length} exceeds waveform length {n_samples}")
    return (n_samples - length) // stride + 1


def segment(w: Waveform, length: int, stride: int) -> list[Waveform]:
    count = window_count(w.samples.size, length, stride)
    return [
        Waveform(w.samples[i * stride : i * stride + length], w.sample_rate)
        for i in range(count)
    ]


def extract_windowed(
    baseline: Waveform,
    recording: Waveform,
    window: FrequencyWindow,
    length: int,
    stride: int,
) -> ObservationSequence:
    """Feature sequence of one recording, one vector per analysis window.

    Window ``i`` of the recording is compared with window ``i`` of the
    baseline, so both must have the same number of samples.
    """
    if len(baseline) != len(recording):
        raise InvalidInputError(
            f"baseline has {len(baseline)} samples but recording has {len(recording)}"
        )
    base_windows = segment(baseline, length, stride)
    rec_windows = segment(recording, length, stride)
    rows = []
    for i, (b, r) in enumerate(zip(base_windows, rec_windows)):
        try:
            rows.append((damage_index_time(b, r), damage_index_freq(r, window)))
        except InvalidInputError as exc:
            raise InvalidInputError(f"window {i}: {exc}") from exc
    return ObservationSequence(np.array(rows))


# -- file formats -------------------------------------------------------------

_RATE_KEY = "sample_rate_hz="


def format_float(x: float) -> str:
    return "%.17g" % x


def write_waveform(path, w: Waveform) -> None:
    body = "\n".join(map(repr, w.samples.tolist()))
    Path(path).write_text(f"{_RATE_KEY}{format_float(w.sample_rate)}\n{body}\n")


def read_waveform(path) -> Waveform:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith(_RATE_KEY):
            raise ParseError(path, 1, f"expected header '{_RATE_KEY}<float>'")
        try:
            rate = float(header[len(_RATE_KEY) :])
        except ValueError:
            raise ParseError(path, 1, f"bad sample rate {header!r}") from None
        lines = fh.read().splitlines()
    try:
        samples = np.array(lines, dtype=np.float64)
    except ValueError:
        samples = np.empty(len(lines))
        for i, line in enumerate(lines):
            try:
                samples[i] = float(line)
            except ValueError:
                raise ParseError(path, i + 2, f"non-numeric sample {line!r}") from None
    try:
        return Waveform(samples, rate)
    except InvalidInputError as exc:
        raise ParseError(path, 1, str(exc)) from None


def write_features(path, seq: ObservationSequence, label_names: Sequence[str] | None = None) -> None:
    """Write ``di1,di2[,label]`` rows; labels are written by name."""
    if seq.dim != 2:
        raise InvalidInputError(f"feature files hold 2-D vectors, got D={seq.dim}")
    with_labels = seq.labels is not None
    lines = ["di1,di2,label" if with_labels else "di1,di2"]
    for t, (a, b) in enumerate(seq.observations):
        row = f"{format_float(a)},{format_float(b)}"
        if with_labels:
            lab = int(seq.labels[t])
            row += f",{label_names[lab] if label_names is not None else lab}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def read_features(path, label_names: Sequence[str] | None = None) -> ObservationSequence:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() not in ("di1,di2", "di1,di2,label"):
        raise ParseError(path, 1, "expected header 'di1,di2[,label]'")
    with_labels = lines[0].strip().endswith(",label")
    index = {name: i for i, name in enumerate(label_names)} if label_names is not None else None
    obs, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != (3 if with_labels else 2):
            raise ParseError(path, lineno, f"expected {3 if with_labels else 2} columns")
        try:
            obs.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ParseError(path, lineno, "non-numeric feature value") from None
        if with_labels:
            lab = parts[2].strip()
            if index is not None:
                if lab not in index:
                    raise ParseError(path, lineno, f"unknown label {lab!r}")
                labels.append(index[lab])
            else:
                try:
                    labels.append(int(lab))
                except ValueError:
                    raise ParseError(path, lineno, f"label {lab!r} is not an index") from None
    if not obs:
        raise ParseError(path, len(lines), "no observations")
    return ObservationSequence(np.array(obs), np.array(labels) if with_labels else None, name=path.stem)
