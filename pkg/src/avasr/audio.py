"""Acoustic feature extraction: 16 kHz waveforms to stacked log-mel rows.

80 log-mel features from 25 ms Hann windows at a 10 ms hop, folded 3-at-a-time
into 240-dimensional rows at 100/3 Hz.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 16000
WIN_SAMPLES = 400  # 25 ms
HOP_SAMPLES = 160  # 10 ms
N_FFT = 512  # next power of two >= window
N_MELS = 80
MEL_FMIN = 125.0
MEL_FMAX = 7600.0
LOG_FLOOR = 1e-10
STACK = 3
FEATURE_DIM = N_MELS * STACK
FRAME_RATE = SAMPLE_RATE / HOP_SAMPLES / STACK  # 100/3 Hz


class WavFormatError(ValueError):
    """Raised for anything other than RIFF PCM16 mono 16 kHz."""


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise WavFormatError(f"expected {SAMPLE_RATE} Hz, got {self.sample_rate}")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class AudioFeatures:
    values: np.ndarray  # (T, 240)
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != FEATURE_DIM:
            raise ValueError(f"expected (T, {FEATURE_DIM}) features, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite feature values")


def read_wav(path) -> Waveform:
    """Read a RIFF PCM 16-bit LE mono 16 kHz file; reject everything else."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: compressed WAV not supported")
            if w.getnchannels() != 1:
                raise WavFormatError(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            if w.getframerate() != SAMPLE_RATE:
                raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()}")
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples)


def write_wav(path, wave_out: Waveform):
    data = np.clip(np.round(wave_out.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(data.tobytes())


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank():
    """Triangular mel filters over the rfft bins.

    Returns (weights, centers_hz): weights is (N_MELS, N_FFT//2+1), centers_hz
    the center frequency of each filter.
    """
    edges_hz = _mel_to_hz(np.linspace(_hz_to_mel(MEL_FMIN), _hz_to_mel(MEL_FMAX), N_MELS + 2))
    bin_hz = np.fft.rfftfreq(N_FFT, d=1.0 / SAMPLE_RATE)
    lo, center, hi = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz[None, :] - lo) / (center - lo)
    falling = (hi - bin_hz[None, :]) / (hi - center)
    weights = np.clip(np.minimum(rising, falling), 0.0, None)
    return weights, edges_hz[1:-1]


_FBANK, MEL_CENTERS_HZ = mel_filterbank()
_HANN = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WIN_SAMPLES) / WIN_SAMPLES)


def log_mel(wave_in: Waveform) -> np.ndarray:
    """80 log-mel rows at 100 Hz: (floor((len-400)/160)+1, 80)."""
    x = wave_in.samples
    if len(x) < WIN_SAMPLES:
        raise ValueError(f"waveform of {len(x)} samples is shorter than one {WIN_SAMPLES}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, WIN_SAMPLES)[::HOP_SAMPLES]
    spectrum = np.fft.rfft(frames * _HANN, n=N_FFT, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ _FBANK.T
    return np.log(np.maximum(mel, LOG_FLOOR))


def stack3(features: np.ndarray) -> AudioFeatures:
    """Fold non-overlapping groups of 3 rows into 240-wide rows.

    Trailing remainder rows are dropped so A/V row counts stay aligned.
    """
    features = np.asarray(features, dtype=np.float64)
    t100 = features.shape[0]
    if t100 < STACK:
        raise ValueError(f"need at least {STACK} feature rows, got {t100}")
    n = t100 // STACK
    stacked = features[: n * STACK].reshape(n, STACK * features.shape[1])
    return AudioFeatures(stacked)


def extract_features(wave_in: Waveform) -> AudioFeatures:
    """Full front-end: log-mel then 3-row stacking."""
    return stack3(log_mel(wave_in))
