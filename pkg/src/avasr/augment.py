"""Acoustic noise protocol: SNR-controlled babble, overlap, and MTR sampling.

The original babble corpus is license-encumbered, so a seeded synthetic
surrogate (band-limited voices with syllabic amplitude modulation) stands in;
the mixing math is what the tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE, Waveform

EVAL_SNRS_DB = (20.0, 10.0, 0.0)


@dataclass
class MtrConfig:
    p_clean: float = 0.2
    snr_lo: float = 0.0
    snr_hi: float = 30.0
    n_voices: int = 8


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def _loop_to_length(noise, n):
    if len(noise) >= n:
        return noise[:n]
    reps = int(np.ceil(n / len(noise)))
    return np.tile(noise, reps)[:n]


def mix_at_snr(signal: Waveform, noise: Waveform, snr_db) -> Waveform:
    """Add noise scaled so the mix sits at ``snr_db`` relative to the signal.

    The noise is looped/truncated to the signal length first and its RMS
    measured on that segment, so the realized SNR is exact.
    """
    sig = signal.samples
    if len(sig) == 0 or rms(sig) == 0.0:
        raise ValueError("cannot mix noise into a silent or empty signal")
    if len(noise.samples) == 0:
        raise ValueError("noise waveform is empty")
    cut = _loop_to_length(noise.samples, len(sig))
    noise_rms = rms(cut)
    if noise_rms == 0.0:
        raise ValueError("noise waveform is silent")
    scale = rms(sig) / noise_rms * 10.0 ** (-float(snr_db) / 20.0)
    return Waveform(sig + scale * cut)


def noise_scale(signal_rms, noise_rms, snr_db):
    """The scalar applied to the noise for a target SNR."""
    return signal_rms / noise_rms * 10.0 ** (-float(snr_db) / 20.0)


def synth_babble(seed, duration, n_voices=8) -> Waveform:
    """Unit-RMS multi-voice surrogate babble.

    Each voice is white noise band-limited to the 300-3000 Hz speech band
    with a 3-6 Hz syllabic amplitude modulation.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * SAMPLE_RATE))
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    band = (freqs >= 300.0) & (freqs <= 3000.0)
    t = np.arange(n) / SAMPLE_RATE
    total = np.zeros(n)
    for _ in range(n_voices):
        spectrum = np.fft.rfft(rng.standard_normal(n))
        voice = np.fft.irfft(spectrum * band, n=n)
        mod_hz = rng.uniform(3.0, 6.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        envelope = 0.55 + 0.45 * np.sin(2.0 * np.pi * mod_hz * t + phase)
        total += voice * envelope
    return Waveform(total / rms(total))


def overlap_mix(signal: Waveform, other: Waveform) -> Waveform:
    """Overlap another utterance at 0 dB (equal power)."""
    sig = signal.samples
    if len(sig) == 0 or rms(sig) == 0.0:
        raise ValueError("cannot overlap onto a silent or empty signal")
    cut = _loop_to_length(other.samples, len(sig))
    other_rms = rms(cut)
    if other_rms == 0.0:
        raise ValueError("overlapping utterance is silent")
    return Waveform(sig + (rms(sig) / other_rms) * cut)


def mtr_sample(signal: Waveform, rng, config: MtrConfig | None = None) -> Waveform:
    """Multi-style training draw: clean with probability p_clean, otherwise
    babble at an SNR uniform on [snr_lo, snr_hi] dB."""
    config = config or MtrConfig()
    if rng.random() < config.p_clean:
        return signal
    snr = rng.uniform(config.snr_lo, config.snr_hi)
    babble = synth_babble(int(rng.integers(2**31)), signal.duration, config.n_voices)
    return mix_at_snr(signal, babble, snr)


def spectral_centroid(wave_in: Waveform):
    """Power-weighted mean frequency in Hz."""
    spectrum = np.abs(np.fft.rfft(wave_in.samples)) ** 2
    freqs = np.fft.rfftfreq(len(wave_in.samples), d=1.0 / SAMPLE_RATE)
    return float((freqs * spectrum).sum() / spectrum.sum())
