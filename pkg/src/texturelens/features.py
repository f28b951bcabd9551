"""Spectral statistics over clips and spectrograms.

These are the measurement oracles the evaluation embedding, the attribute
classifiers, and the test suite all share: band energies, spectral centroid,
flatness, onset counting, resonance-trajectory slope, and duty cycle.
"""

from __future__ import annotations

import numpy as np

from .audio import (
    DEFAULT_SAMPLE_RATE,
    FLOOR_DB,
    AudioClip,
    Spectrogram,
    StftParams,
    gabor_stft,
)

N_EMBED_BANDS = 16
_SILENT_POWER = 10.0 ** (FLOOR_DB / 10.0)
# envelope must clear the spectrogram floor by this much to count as signal
_ACTIVITY_MARGIN_DB = 20.0


def power_matrix(spec: Spectrogram) -> np.ndarray:
    return 10.0 ** (spec.values / 10.0)


def frame_envelope(spec: Spectrogram) -> np.ndarray:
    """Linear power per frame."""
    return power_matrix(spec).sum(axis=0)


def _is_active(env: np.ndarray, n_bins: int) -> bool:
    silent = n_bins * _SILENT_POWER
    return env.max() > silent * 10.0 ** (_ACTIVITY_MARGIN_DB / 10.0)


def band_edges(n_bands: int = N_EMBED_BANDS, f_lo: float = 50.0, f_hi: float = 8000.0):
    return np.geomspace(f_lo, f_hi, n_bands + 1)


def band_energies_db(spec: Spectrogram, n_bands: int = N_EMBED_BANDS,
                     sample_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Mean power per log-spaced band, in dB; silence sits at the floor."""
    power = power_matrix(spec)
    freqs = np.arange(spec.shape[0]) * sample_rate / spec.params.stft_channels
    edges = band_edges(n_bands)
    out = np.empty(n_bands)
    for b in range(n_bands):
        sel = (freqs >= edges[b]) & (freqs < edges[b + 1])
        mean_p = power[sel].mean() if sel.any() else _SILENT_POWER
        out[b] = 10.0 * np.log10(max(mean_p, _SILENT_POWER))
    return out


def spectral_centroid(spec: Spectrogram, sample_rate: int = DEFAULT_SAMPLE_RATE) -> float:
    """Power-weighted mean frequency (Hz) of the time-summed spectrum."""
    power = power_matrix(spec).sum(axis=1)
    freqs = np.arange(spec.shape[0]) * sample_rate / spec.params.stft_channels
    return float((freqs * power).sum() / power.sum())


def spectral_flatness(spec: Spectrogram) -> float:
    """Geometric over arithmetic mean of the time-averaged power spectrum."""
    power = power_matrix(spec).mean(axis=1)
    power = np.maximum(power, _SILENT_POWER)
    return float(np.exp(np.mean(np.log(power))) / power.mean())


def onset_count(spec: Spectrogram) -> int:
    """Count energy-envelope attacks with rise/re-arm hysteresis.

    An onset is a crossing of the rise threshold while armed; the detector
    re-arms once the envelope falls back below a fraction of the last peak.
    Sustained or shallowly modulated textures therefore count once.
    """
    env = frame_envelope(spec)
    if not _is_active(env, spec.shape[0]):
        return 0
    if len(env) >= 3:
        env = np.convolve(env, np.ones(3) / 3.0, mode="same")
    peak = env.max()
    rise = max(0.25 * peak, 3.0 * np.median(env))
    count = 0
    armed = True
    current_peak = 0.0
    for value in env:
        if armed:
            if value >= rise:
                count += 1
                armed = False
                current_peak = value
        else:
            current_peak = max(current_peak, value)
            if value < 0.25 * current_peak and value < rise:
                armed = True
    return count


def duty_cycle(spec: Spectrogram, rel: float = 0.1) -> float:
    """Fraction of frames whose envelope is within ``rel`` of the peak."""
    env = frame_envelope(spec)
    if not _is_active(env, spec.shape[0]):
        return 0.0
    return float((env >= rel * env.max()).mean())


def resonance_slope(spec: Spectrogram, sample_rate: int = DEFAULT_SAMPLE_RATE) -> float:
    """Slope (Hz/s) of the per-frame peak-frequency trajectory.

    Restricted to frames carrying meaningful energy; zero for silence or
    too-short activity. This is the fill-level statistic: a rising resonance
    gives a positive slope, a stationary one gives ~0.
    """
    env = frame_envelope(spec)
    if not _is_active(env, spec.shape[0]):
        return 0.0
    active = env >= 0.05 * env.max()
    if active.sum() < 8:
        return 0.0
    rows = power_matrix(spec).argmax(axis=0)[active]
    frames = np.flatnonzero(active)
    slope_rows_per_frame = np.polyfit(frames, rows, 1)[0]
    hz_per_row = sample_rate / spec.params.stft_channels
    frames_per_second = sample_rate / spec.params.hop_size
    return float(slope_rows_per_frame * hz_per_row * frames_per_second)


def high_band_energy_db(spec: Spectrogram, cutoff_hz: float = 3000.0,
                        sample_rate: int = DEFAULT_SAMPLE_RATE) -> float:
    """Mean power (dB) at and above ``cutoff_hz``."""
    freqs = np.arange(spec.shape[0]) * sample_rate / spec.params.stft_channels
    power = power_matrix(spec)[freqs >= cutoff_hz]
    return float(10.0 * np.log10(max(power.mean(), _SILENT_POWER)))


def clip_spectrogram(clip: AudioClip, params: StftParams | None = None) -> Spectrogram:
    return gabor_stft(clip, params or StftParams())
