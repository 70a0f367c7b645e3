"""Waveform to z-score-normalized log-mel spectrogram conversion.

Defaults follow the experimental front end: 44.1 kHz input, a 20 ms Hann
window (882 samples) with 50% overlap, FFT size 1024, 64 HTK-mel triangular
filters spanning 0 Hz to Nyquist, power spectrogram, log floor 1e-10, and
per-mel-bin z-score normalization with statistics fit on the training pool
only. Everything here is pure and deterministic: identical bytes in,
identical values out.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.io.wavfile

from .errors import ConfigError, DataError, ShapeError


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 44100
    window: int = 882  # ~20 ms at 44.1 kHz
    hop: int = 441  # 50% overlap
    fft_size: int = 1024  # next power of two >= window
    n_mels: int = 64
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not (0 < self.hop <= self.window <= self.fft_size):
            raise ConfigError(
                f"need 0 < hop <= window <= fft_size, got "
                f"hop={self.hop} window={self.window} fft_size={self.fft_size}"
            )
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @classmethod
    def for_window(cls, window: int, sample_rate: int = 44100, **kw) -> "DspConfig":
        """Config with hop = window // 2 and fft = next power of two."""
        return cls(
            sample_rate=sample_rate,
            window=window,
            hop=max(1, window // 2),
            fft_size=_next_pow2(window),
            **kw,
        )

    def fingerprint(self) -> str:
        blob = json.dumps(
            {
                "sample_rate": self.sample_rate,
                "window": self.window,
                "hop": self.hop,
                "fft_size": self.fft_size,
                "n_mels": self.n_mels,
                "log_floor": self.log_floor,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def n_frames(self, n_samples: int) -> int:
        """Frame count for a clip of ``n_samples`` (short clips are padded
        to one window)."""
        if n_samples <= 0:
            raise DataError("empty waveform")
        n = max(n_samples, self.window)
        return 1 + (n - self.window) // self.hop


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # mono, float64
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError("waveform sample_rate must be positive")
        if self.samples.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class LogMelSpectrogram:
    values: np.ndarray  # [frames, n_mels]
    fingerprint: str  # DspConfig fingerprint of the front end that made it

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(
                f"log-mel values must be [frames, mels], got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataError("log-mel spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(samples: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """Slice a waveform into overlapping frames [n_frames, window].

    Clips shorter than one window are zero-padded up to one window.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise DataError("empty waveform")
    if x.size < cfg.window:
        x = np.concatenate([x, np.zeros(cfg.window - x.size)])
    n_frames = 1 + (x.size - cfg.window) // cfg.hop
    idx = np.arange(cfg.window)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    return x[idx]


def stft(w: Waveform, cfg: DspConfig) -> np.ndarray:
    """Hann-windowed short-time Fourier transform.

    Returns a complex matrix [n_frames, fft_size // 2 + 1]; each frame is
    zero-padded from the window length up to the FFT size.
    """
    frames = frame_signal(w.samples, cfg) * hann_window(cfg.window)[None, :]
    return np.fft.rfft(frames, n=cfg.fft_size, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    """Triangular HTK-mel filterbank [n_mels, fft_size // 2 + 1].

    Filters span 0 Hz to Nyquist with unit peaks. A configuration where some
    triangle covers no FFT bin with positive weight is rejected.
    """
    n_bins = cfg.fft_size // 2 + 1
    bin_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.fft_size
    mel_points = np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0.0)
    if empty.size:
        raise ConfigError(
            f"n_mels={cfg.n_mels} too large for fft_size={cfg.fft_size}: "
            f"filter {int(empty[0])} covers no FFT bin"
        )
    return fb


def logmel(w: Waveform, cfg: DspConfig) -> LogMelSpectrogram:
    """log(floor + filterbank @ |stft|^2) per frame, [frames, n_mels]."""
    spectrum = stft(w, cfg)
    power = np.abs(spectrum) ** 2
    fb = mel_filterbank(cfg)
    values = np.log(cfg.log_floor + power @ fb.T)
    return LogMelSpectrogram(values=values, fingerprint=cfg.fingerprint())


@dataclass(frozen=True)
class ZScoreStats:
    """Per-mel-bin mean and standard deviation fit on a training pool."""

    mean: np.ndarray  # [n_mels]
    std: np.ndarray  # [n_mels], floored at eps

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError("z-score stats must be matching 1-D arrays")
        if np.any(self.std <= 0):
            raise DataError("z-score std must be positive after flooring")


def zscore_fit(specs: Iterable[LogMelSpectrogram], eps: float = 1e-10) -> ZScoreStats:
    """Fit per-bin statistics pooled over every frame of every spectrogram."""
    mats = [s.values for s in specs]
    if not mats:
        raise DataError("cannot fit z-score statistics on an empty collection")
    stacked = np.concatenate(mats, axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), eps)
    return ZScoreStats(mean=mean, std=std)


def zscore_apply(spec: LogMelSpectrogram, stats: ZScoreStats) -> LogMelSpectrogram:
    if spec.n_mels != stats.mean.shape[0]:
        raise ShapeError(
            f"spectrogram has {spec.n_mels} mel bins, stats have "
            f"{stats.mean.shape[0]}"
        )
    return LogMelSpectrogram(
        values=(spec.values - stats.mean) / stats.std,
        fingerprint=spec.fingerprint,
    )


def fit_frames(values: np.ndarray, n_frames: int) -> np.ndarray:
    """Crop or zero-pad along the frame axis to a fixed frame count."""
    if values.shape[0] == n_frames:
        return values
    if values.shape[0] > n_frames:
        return values[:n_frames]
    pad = np.zeros((n_frames - values.shape[0], values.shape[1]))
    return np.concatenate([values, pad], axis=0)


# -- waveform IO ------------------------------------------------------------


def read_wav(path, expected_rate: int | None = None) -> Waveform:
    """Read a PCM16 or float32 WAV file; multi-channel input is averaged
    down to mono. Sample values are scaled to [-1, 1] for integer formats."""
    try:
        rate, data = scipy.io.wavfile.read(path)
    except ValueError as e:
        raise DataError(f"{path}: cannot read WAV: {e}") from None
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DataError(
            f"{path}: unsupported WAV sample format {data.dtype}; "
            "use 16-bit PCM or 32-bit float"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if expected_rate is not None and rate != expected_rate:
        raise DataError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz "
            "(resampling is out of scope)"
        )
    return Waveform(samples=samples, sample_rate=int(rate))


def write_wav(path, w: Waveform) -> None:
    scipy.io.wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))


# -- feature cache ----------------------------------------------------------

_FEATURE_MAGIC = b"LOGMEL1 "


def save_features(path, spec: LogMelSpectrogram) -> None:
    """Write a spectrogram as a one-line JSON header plus raw float32 bytes.

    The byte stream is bit-exact across runs for identical inputs.
    """
    header = json.dumps(
        {
            "shape": list(spec.values.shape),
            "dtype": "float32",
            "fingerprint": spec.fingerprint,
        },
        sort_keys=True,
    )
    payload = np.ascontiguousarray(spec.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC + header.encode() + b"\n")
        fh.write(payload)


def load_features(path) -> LogMelSpectrogram:
    with open(path, "rb") as fh:
        first = fh.readline()
        if not first.startswith(_FEATURE_MAGIC):
            raise DataError(f"{path}: not a feature cache file")
        try:
            header = json.loads(first[len(_FEATURE_MAGIC) :].decode())
            shape = tuple(header["shape"])
            fingerprint = header["fingerprint"]
        except (json.JSONDecodeError, KeyError) as e:
            raise DataError(f"{path}: corrupt feature header: {e}") from None
        payload = fh.read()
    values = np.frombuffer(payload, dtype="<f4")
    if values.size != int(np.prod(shape)):
        raise DataError(
            f"{path}: payload holds {values.size} floats, header says {shape}"
        )
    return LogMelSpectrogram(
        values=values.reshape(shape).astype(np.float64), fingerprint=fingerprint
    )
