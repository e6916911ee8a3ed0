"""Acoustic feature extraction: framing, silence ratio, LLDs, functionals.

A mono waveform is cut into overlapping frames (25 ms window, 10 ms hop by
default). Per frame we compute a 14-channel set of low-level descriptors
(LLDs); per utterance we reduce them to fixed-length feature vectors:

    HSF1 = [mean of each LLD, std of each LLD]          length 2*L
    HSF2 = HSF1 ++ [silence ratio]                      length 2*L + 1

The silence ratio is the fraction of frames whose RMS energy does not
exceed ``silence_factor * mean(frame RMS)``; the comparison is inclusive so
an all-zero waveform deterministically scores 1.0.

Channel set and numeric conventions (floors, sentinels) are chosen so that
every finite waveform yields finite features: intensity is floored at
-120 dB, unvoiced frames emit F0 = 0, and HNR is clamped to [-60, 60] dB.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.io.wavfile

from .errors import (
    TooFewFramesError,
    TooShortError,
    UnsupportedFormatError,
    UnsupportedRateError,
)

ACCEPTED_SAMPLE_RATES = (8000, 16000, 44100, 48000)

#: Registered LLD channels, in column order of every LldMatrix.
LLD_CHANNELS = (
    "intensity_db",
    "alpha_ratio_db",
    "hammarberg_db",
    "slope_0_500",
    "slope_500_1500",
    "spectral_flux",
    "mfcc1",
    "mfcc2",
    "mfcc3",
    "mfcc4",
    "f0_hz",
    "hnr_db",
    "jitter",
    "shimmer",
)

_INTENSITY_FLOOR_DB = -120.0
_RMS_FLOOR = 1e-6  # 20*log10(1e-6) == -120 dB
_EPS = 1e-10
_N_MELS = 26


@dataclass(frozen=True)
class Waveform:
    """Mono audio signal with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if np.max(np.abs(samples)) > 1.0 + 1e-6:
            raise ValueError("waveform amplitudes must lie in [-1, 1]")
        if int(self.sample_rate) not in ACCEPTED_SAMPLE_RATES:
            raise UnsupportedRateError(
                f"sample rate {self.sample_rate} not in {ACCEPTED_SAMPLE_RATES}"
            )
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrameConfig:
    """Framing and silence/F0 analysis parameters.

    ``silence_factor`` is the multiplier on the utterance mean frame RMS
    that defines the silence threshold; it is exposed because no single
    value suits all material (0.3 keeps fully voiced synthetic signals at
    ~0% silence while half-silent signals score ~50%).
    """

    window_length: float = 0.025
    hop_length: float = 0.010
    silence_factor: float = 0.3
    fft_size: int | None = None
    f0_min: float = 60.0
    f0_max: float = 500.0
    voicing_threshold: float = 0.3

    def __post_init__(self):
        if self.window_length <= 0 or self.hop_length <= 0:
            raise ValueError("window and hop lengths must be positive")
        if self.hop_length > self.window_length:
            raise ValueError("hop length must not exceed window length")
        if self.silence_factor <= 0:
            raise ValueError("silence_factor must be positive")
        if not (0 < self.f0_min < self.f0_max):
            raise ValueError("need 0 < f0_min < f0_max")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_length * sample_rate))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_length * sample_rate))

    def resolved_fft_size(self, sample_rate: int) -> int:
        win = self.window_samples(sample_rate)
        if self.fft_size is None:
            return _next_pow2(win)
        if self.fft_size < win or self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two >= window samples")
        return self.fft_size


@dataclass(frozen=True)
class LldMatrix:
    """Frame-by-channel matrix of low-level descriptors."""

    values: np.ndarray  # (n_frames, n_channels)
    channels: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.channels):
            raise ValueError(
                f"LLD matrix shape {values.shape} does not match "
                f"{len(self.channels)} channels"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("LLD matrix contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-length per-utterance feature vector with a schema tag."""

    values: np.ndarray
    schema_id: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("feature vector must be 1-D")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature vector contains non-finite values")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def frame_signal(waveform: Waveform, cfg: FrameConfig | None = None) -> np.ndarray:
    """Slice a waveform into overlapping frames.

    Returns an (n_frames, window_samples) copy; trailing samples that do
    not fill a whole window are dropped, so
    n_frames = floor((N - window) / hop) + 1.

    Raises:
        TooShortError: waveform shorter than one window.
    """
    cfg = cfg or FrameConfig()
    sr = waveform.sample_rate
    win = cfg.window_samples(sr)
    hop = cfg.hop_samples(sr)
    n = waveform.samples.size
    if n < win:
        raise TooShortError(f"waveform of {n} samples shorter than window of {win}")
    n_frames = (n - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return waveform.samples[idx].copy()


def rms(frame) -> float:
    """Root-mean-square amplitude of a single frame."""
    x = np.asarray(frame, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty frame")
    return float(np.sqrt(np.mean(x * x)))


def frame_rms(frames: np.ndarray) -> np.ndarray:
    """RMS per row of a frame matrix."""
    return np.sqrt(np.mean(frames * frames, axis=1))


def silence_ratio(waveform: Waveform, cfg: FrameConfig | None = None) -> float:
    """Fraction of frames at or below the adaptive RMS threshold.

    A frame is silent iff its RMS <= silence_factor * mean(frame RMS); the
    threshold adapts to the utterance, so scaling the amplitude by any
    positive constant leaves the ratio unchanged.
    """
    cfg = cfg or FrameConfig()
    energies = frame_rms(frame_signal(waveform, cfg))
    threshold = cfg.silence_factor * float(energies.mean())
    return float(np.mean(energies <= threshold))


# --- spectral helpers --------------------------------------------------------


def _band_mask(freqs: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (freqs >= lo) & (freqs < hi)


def _band_slope(spectra_db: np.ndarray, freqs: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Least-squares slope of the dB spectrum against frequency in kHz."""
    mask = _band_mask(freqs, lo, hi)
    f_khz = freqs[mask] / 1000.0
    df = f_khz - f_khz.mean()
    denom = np.sum(df * df)
    if denom == 0.0:
        return np.zeros(spectra_db.shape[0])
    band = spectra_db[:, mask]
    centered = band - band.mean(axis=1, keepdims=True)
    return centered @ df / denom


def _mel_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank over the rfft bins (HTK mel scale)."""

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(to_mel(0.0), to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = from_mel(mel_points)
    bins = np.floor((fft_size + 1) * hz_points / sample_rate).astype(int)
    bins = np.clip(bins, 0, fft_size // 2)
    fbank = np.zeros((n_mels, fft_size // 2 + 1))
    for m in range(1, n_mels + 1):
        left, center, right = bins[m - 1], bins[m], bins[m + 1]
        for k in range(left, center):
            if center > left:
                fbank[m - 1, k] = (k - left) / (center - left)
        for k in range(center, right):
            if right > center:
                fbank[m - 1, k] = (right - k) / (right - center)
    return fbank


def _autocorr_f0(
    frames: np.ndarray, sample_rate: int, cfg: FrameConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame F0 (Hz, 0 when unvoiced) and normalized autocorrelation peak.

    Normalized, bias-corrected autocorrelation over a lag band derived from
    [f0_min, f0_max]; the integer peak is refined by parabolic interpolation.
    """
    n_frames, win = frames.shape
    pad = _next_pow2(2 * win)
    spectra = np.fft.rfft(frames, n=pad, axis=1)
    ac = np.fft.irfft(spectra * np.conj(spectra), n=pad, axis=1)[:, :win]

    lag_min = max(2, int(np.floor(sample_rate / cfg.f0_max)))
    lag_max = min(win - 2, int(np.ceil(sample_rate / cfg.f0_min)))
    if lag_max <= lag_min:
        return np.zeros(n_frames), np.zeros(n_frames)

    energy = ac[:, 0] / win  # mean power per frame
    lags = np.arange(lag_min, lag_max + 1)
    # Unbiased normalization: divide by the number of overlapping samples.
    norm = (ac[:, lag_min : lag_max + 1] / (win - lags)[None, :]) / (
        energy[:, None] + _EPS
    )
    best = np.argmax(norm, axis=1)
    rows = np.arange(n_frames)
    r_peak = norm[rows, best]
    best_lag = lags[best].astype(np.float64)

    # Parabolic refinement around the integer peak.
    interior = (best > 0) & (best < lags.size - 1)
    r_m = norm[rows, np.maximum(best - 1, 0)]
    r_p = norm[rows, np.minimum(best + 1, lags.size - 1)]
    denom = r_m - 2.0 * r_peak + r_p
    delta = np.where(
        interior & (np.abs(denom) > _EPS), 0.5 * (r_m - r_p) / (denom + _EPS), 0.0
    )
    delta = np.clip(delta, -0.5, 0.5)
    best_lag = best_lag + delta

    voiced = (r_peak >= cfg.voicing_threshold) & (np.sqrt(energy) > _RMS_FLOOR)
    f0 = np.where(voiced, sample_rate / best_lag, 0.0)
    r_peak = np.where(np.sqrt(energy) > _RMS_FLOOR, r_peak, 0.0)
    return f0, np.clip(r_peak, 0.0, 1.0 - 1e-6)


def _relative_change(values: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Frame-to-frame relative deviation 2|a-b|/(a+b); 0 where inactive."""
    out = np.zeros_like(values)
    if values.size < 2:
        return out
    prev, cur = values[:-1], values[1:]
    ok = active[:-1] & active[1:]
    denom = prev + cur
    change = np.where(ok & (denom > 0), 2.0 * np.abs(cur - prev) / (denom + _EPS), 0.0)
    out[1:] = change
    return out


def extract_llds(waveform: Waveform, cfg: FrameConfig | None = None) -> LldMatrix:
    """Compute the registered 14-channel LLD matrix, one row per frame."""
    cfg = cfg or FrameConfig()
    sr = waveform.sample_rate
    frames = frame_signal(waveform, cfg)
    n_frames = frames.shape[0]
    fft_size = cfg.resolved_fft_size(sr)

    window = np.hamming(frames.shape[1])
    mags = np.abs(np.fft.rfft(frames * window[None, :], n=fft_size, axis=1))
    power = mags * mags
    freqs = np.fft.rfftfreq(fft_size, d=1.0 / sr)
    spectra_db = 20.0 * np.log10(mags + _EPS)

    cols: dict[str, np.ndarray] = {}

    energies = frame_rms(frames)
    cols["intensity_db"] = 20.0 * np.log10(np.maximum(energies, _RMS_FLOOR))

    low = power[:, _band_mask(freqs, 50.0, 1000.0)].sum(axis=1)
    high = power[:, _band_mask(freqs, 1000.0, 5000.0)].sum(axis=1)
    cols["alpha_ratio_db"] = 10.0 * np.log10((low + _EPS) / (high + _EPS))

    peak_low = mags[:, _band_mask(freqs, 0.0, 2000.0)].max(axis=1)
    peak_high = mags[:, _band_mask(freqs, 2000.0, 5000.0)].max(axis=1)
    cols["hammarberg_db"] = 20.0 * np.log10((peak_low + _EPS) / (peak_high + _EPS))

    cols["slope_0_500"] = _band_slope(spectra_db, freqs, 0.0, 500.0)
    cols["slope_500_1500"] = _band_slope(spectra_db, freqs, 500.0, 1500.0)

    flux = np.zeros(n_frames)
    if n_frames > 1:
        flux[1:] = np.mean(np.abs(np.diff(mags, axis=0)), axis=1)
    cols["spectral_flux"] = flux

    fbank = _mel_filterbank(_N_MELS, fft_size, sr)
    log_mel = np.log(power @ fbank.T + _EPS)
    mfcc = scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)
    for k in range(1, 5):
        cols[f"mfcc{k}"] = mfcc[:, k]

    f0, r_peak = _autocorr_f0(frames, sr, cfg)
    cols["f0_hz"] = f0
    r_c = np.clip(r_peak, 1e-6, 1.0 - 1e-6)
    cols["hnr_db"] = 10.0 * np.log10(r_c / (1.0 - r_c))

    cols["jitter"] = _relative_change(f0, f0 > 0)
    peaks = np.max(np.abs(frames), axis=1)
    cols["shimmer"] = _relative_change(peaks, peaks > _RMS_FLOOR)

    values = np.column_stack([cols[name] for name in LLD_CHANNELS])
    return LldMatrix(values=values, channels=LLD_CHANNELS)


def functionals(llds: LldMatrix, silence: float | None = None) -> FeatureVector:
    """Reduce an LLD matrix to HSF1 (means, stds) or HSF2 (plus silence).

    Raises:
        TooFewFramesError: fewer than two frames (std undefined).
    """
    if llds.n_frames < 2:
        raise TooFewFramesError(
            f"need at least 2 frames for functionals, got {llds.n_frames}"
        )
    means = llds.values.mean(axis=0)
    stds = llds.values.std(axis=0)  # population std, matching metrics conventions
    if silence is None:
        return FeatureVector(np.concatenate([means, stds]), "HSF1")
    if not 0.0 <= silence <= 1.0:
        raise ValueError(f"silence ratio must lie in [0, 1], got {silence}")
    return FeatureVector(np.concatenate([means, stds, [silence]]), "HSF2")


def extract_hsf(
    waveform: Waveform, cfg: FrameConfig | None = None, include_silence: bool = True
) -> FeatureVector:
    """One-call extraction of HSF1 or HSF2 from a waveform."""
    cfg = cfg or FrameConfig()
    llds = extract_llds(waveform, cfg)
    silence = silence_ratio(waveform, cfg) if include_silence else None
    return functionals(llds, silence)


# --- audio and feature file I/O ----------------------------------------------


def read_wav(path) -> Waveform:
    """Read a mono WAV file (PCM 16-bit or IEEE float).

    Raises:
        UnsupportedFormatError: stereo files or unsupported sample encodings.
        UnsupportedRateError: sample rate outside the accepted set.
    """
    rate, data = scipy.io.wavfile.read(str(path))
    if data.ndim != 1:
        raise UnsupportedFormatError(
            f"{path}: expected mono audio, got {data.ndim} channels"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported sample format {data.dtype}; "
            "expected 16-bit PCM or IEEE float"
        )
    return Waveform(samples=samples, sample_rate=int(rate))


def write_wav(path, waveform: Waveform) -> None:
    """Write a waveform as mono 16-bit PCM."""
    pcm = np.round(waveform.samples * 32767.0).astype(np.int16)
    scipy.io.wavfile.write(str(path), waveform.sample_rate, pcm)


def write_feature_csv(path, ids, vectors: list[FeatureVector]) -> None:
    """Write feature vectors as CSV: utterance_id,schema_id,v1..vK.

    Values are stored with 9 significant digits, which round-trips exactly
    through this module's reader.
    """
    ids = list(ids)
    if len(ids) != len(vectors):
        raise ValueError("ids and vectors must have equal length")
    if not vectors:
        raise ValueError("no feature vectors to write")
    width = len(vectors[0])
    schema = vectors[0].schema_id
    for vec in vectors:
        if len(vec) != width or vec.schema_id != schema:
            raise ValueError("all feature vectors must share schema and length")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utterance_id", "schema_id"] + [f"v{i + 1}" for i in range(width)])
        for utt_id, vec in zip(ids, vectors):
            writer.writerow([utt_id, schema] + [f"{v:.9g}" for v in vec.values])


def read_feature_csv(path) -> tuple[list[str], str, np.ndarray]:
    """Read a feature CSV back into (ids, schema_id, (n, K) matrix)."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["utterance_id", "schema_id"]:
            raise ValueError(f"{path}: not a feature CSV")
        ids, rows, schema = [], [], None
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            if schema is None:
                schema = row[1]
            elif row[1] != schema:
                raise ValueError(f"{path}: mixed schema ids in one file")
            rows.append([float(v) for v in row[2:]])
    if schema is None:
        raise ValueError(f"{path}: empty feature file")
    return ids, schema, np.asarray(rows, dtype=np.float64)
