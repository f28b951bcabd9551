"""Time-frequency analysis and synthesis.

Gabor STFT (Gaussian window, circular framing), log-magnitude spectrograms,
amplitude-threshold masking, PGHI phase reconstruction, and the Gram-matrix
autocorrelation features used by the inversion loss.

Conventions: mono audio, float samples nominally in [-1, 1], 16 kHz default.
Spectrograms are (freq_bins x frames) matrices of dB values clamped at
``FLOOR_DB``; the Nyquist bin is dropped so the default grid is 256 x 256.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SAMPLE_RATE = 16000
FLOOR_DB = -100.0
LOG_EPS = 1e-8
PGHI_TOL = 1e-6
# Gaussian window height at the frame edges. Deeper truncation keeps the
# log-magnitude/phase-gradient relation accurate; 1e-4 measured best for
# round-trip fidelity on modal impact material.
WINDOW_EDGE = 1e-4
PGHI_REFINE_ITERS = 2

__all__ = [
    "DEFAULT_SAMPLE_RATE",
    "FLOOR_DB",
    "AudioClip",
    "StftParams",
    "Spectrogram",
    "MaskedSpectrogram",
    "AutocorrMap",
    "gabor_stft",
    "gabor_stft_complex",
    "istft",
    "pghi_invert",
    "threshold_mask",
    "autocorr_features",
    "autocorr_loss",
    "log_filterbank",
    "spectrogram_feature_maps",
]


@dataclass(frozen=True)
class AudioClip:
    """Mono PCM samples at a fixed rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip expects a 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @staticmethod
    def silence(duration=2.0, sample_rate=DEFAULT_SAMPLE_RATE) -> "AudioClip":
        return AudioClip(np.zeros(int(round(duration * sample_rate))), sample_rate)


@dataclass(frozen=True)
class StftParams:
    """Gabor transform grid: window/FFT length, hop, frame count."""

    stft_channels: int = 512
    hop_size: int = 128
    n_frames: int = 256

    def __post_init__(self):
        if self.stft_channels <= 0 or self.hop_size <= 0 or self.n_frames <= 0:
            raise ValueError("stft params must be positive")
        if self.stft_channels % self.hop_size != 0:
            raise ValueError("hop_size must divide stft_channels")

    @property
    def n_bins(self) -> int:
        # one-sided bins with the Nyquist row dropped, keeps the grid square
        return self.stft_channels // 2

    @property
    def signal_length(self) -> int:
        return self.n_frames * self.hop_size

    def window(self) -> np.ndarray:
        """Gaussian analysis window, width tied to the channel count.

        The width is set so the window decays to ``WINDOW_EDGE`` at the frame
        boundary: truncation ripple otherwise biases the phase gradients PGHI
        integrates, which shows up as drift along partial ridges.
        """
        c = self.stft_channels
        n = np.arange(c)
        return np.exp(-np.pi * (n - c / 2) ** 2 / self.gamma)

    @property
    def gamma(self) -> float:
        """Time-frequency ratio (samples^2) of the Gaussian window."""
        c = self.stft_channels
        return float(np.pi * (c / 2) ** 2 / math.log(1.0 / WINDOW_EDGE))


@dataclass(frozen=True)
class Spectrogram:
    """Log-magnitude (dB) time-frequency matrix, freq rows x time columns."""

    values: np.ndarray
    params: StftParams = field(default_factory=StftParams)
    floor_db: float = FLOOR_DB

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("Spectrogram values must be 2-D")
        if values.shape != (self.params.n_bins, self.params.n_frames):
            raise ValueError(
                f"spectrogram shape {values.shape} does not match params "
                f"({self.params.n_bins}, {self.params.n_frames})"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("spectrogram values must be finite")
        if values.min() < self.floor_db - 1e-9:
            raise ValueError("spectrogram values below floor_db")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    def bin_frequency(self, row: int, sample_rate: int = DEFAULT_SAMPLE_RATE) -> float:
        return row * sample_rate / self.params.stft_channels


@dataclass(frozen=True)
class MaskedSpectrogram:
    """Spectrogram plus a keep-mask from amplitude thresholding."""

    base: Spectrogram
    mask: np.ndarray
    threshold_db: float

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.base.values.shape:
            raise ValueError("mask shape must match spectrogram")
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class AutocorrMap:
    """Per-feature-map linear autocorrelation, one row of lags per map."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("AutocorrMap expects a non-empty (maps x lags) array")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape


def _frame_indices(params: StftParams) -> np.ndarray:
    # frame m is windowed around sample m*hop; circular indexing over the
    # canonical signal length keeps analysis/synthesis exactly invertible
    c = params.stft_channels
    offs = np.arange(c) - c // 2
    starts = np.arange(params.n_frames) * params.hop_size
    return (starts[:, None] + offs[None, :]) % params.signal_length


def gabor_stft_complex(clip: AudioClip, params: StftParams | None = None) -> np.ndarray:
    """Complex one-sided STFT, shape (channels/2 + 1, n_frames)."""
    params = params or StftParams()
    n = len(clip.samples)
    if n > params.signal_length:
        raise ValueError("clip exceeds frame budget")
    x = np.zeros(params.signal_length)
    x[:n] = clip.samples
    frames = x[_frame_indices(params)] * params.window()[None, :]
    return np.fft.rfft(frames, axis=1).T


def gabor_stft(clip: AudioClip, params: StftParams | None = None) -> Spectrogram:
    """Log-magnitude Gabor spectrogram; tail zero-padded to fill the grid."""
    params = params or StftParams()
    coeff = gabor_stft_complex(clip, params)[: params.n_bins]
    mag_db = 20.0 * np.log10(np.abs(coeff) + LOG_EPS)
    return Spectrogram(np.maximum(mag_db, FLOOR_DB), params)


def istft(coeff: np.ndarray, params: StftParams | None = None) -> np.ndarray:
    """Dual-window overlap-add inverse of :func:`gabor_stft_complex`."""
    params = params or StftParams()
    L = params.signal_length
    g = params.window()
    frames = np.fft.irfft(coeff.T, n=params.stft_channels, axis=1) * g[None, :]
    idx = _frame_indices(params)
    out = np.zeros(L)
    denom = np.zeros(L)
    np.add.at(out, idx.ravel(), frames.ravel())
    np.add.at(denom, idx.ravel(), np.tile(g * g, params.n_frames))
    return out / denom


def _phase_gradients(log_mag: np.ndarray, params: StftParams):
    """Estimated phase derivatives from the log-magnitude surface.

    ``tgrad`` is the phase advance per frame step, ``fgrad`` per bin step,
    both for the frame-centered Gaussian analysis above. The magnitude terms
    follow the Gaussian-window phase/log-magnitude relation; the additive
    terms account for the frame-local phase reference.
    """
    fmul = params.gamma / (params.hop_size * params.stft_channels)  # = 1 matched
    dmag_dbin, dmag_dframe = np.gradient(log_mag)
    bins = np.arange(log_mag.shape[0])[:, None]
    tgrad = dmag_dbin / fmul + (2.0 * np.pi * params.hop_size / params.stft_channels) * bins
    fgrad = -fmul * dmag_dframe + np.pi
    return tgrad, fgrad


def _integrate_phase(mag: np.ndarray, tgrad: np.ndarray, fgrad: np.ndarray,
                     tol: float = PGHI_TOL) -> np.ndarray:
    """Heap-ordered integration of the phase gradients (PGHI core).

    Cells below ``tol`` times the peak magnitude get pseudo-random phase.
    Plain Python lists keep the inner loop fast without a compiled kernel.
    """
    n_bins, n_frames = mag.shape
    n = mag.size
    magf = mag.ravel()
    thresh = tol * magf.max()
    tg = tgrad.ravel().tolist()
    fg = fgrad.ravel().tolist()
    magl = magf.tolist()
    phase = np.random.default_rng(0).uniform(0.0, 2.0 * np.pi, n)
    done = (magf <= thresh)
    remaining = int(n - done.sum())
    phase_l = phase.tolist()
    done_l = done.tolist()
    order = np.argsort(-magf, kind="stable").tolist()
    ptr = 0
    T = n_frames
    last_col = T - 1
    while remaining > 0:
        while done_l[order[ptr]]:
            ptr += 1
        seed = order[ptr]
        phase_l[seed] = 0.0
        done_l[seed] = True
        remaining -= 1
        heap = [(-magl[seed], seed)]
        while heap:
            _, i = heapq.heappop(heap)
            ph = phase_l[i]
            col = i % T
            j = i + T
            if j < n and not done_l[j]:
                phase_l[j] = ph + 0.5 * (fg[i] + fg[j])
                done_l[j] = True
                remaining -= 1
                heapq.heappush(heap, (-magl[j], j))
            j = i - T
            if j >= 0 and not done_l[j]:
                phase_l[j] = ph - 0.5 * (fg[i] + fg[j])
                done_l[j] = True
                remaining -= 1
                heapq.heappush(heap, (-magl[j], j))
            if col != last_col:
                j = i + 1
                if not done_l[j]:
                    phase_l[j] = ph + 0.5 * (tg[i] + tg[j])
                    done_l[j] = True
                    remaining -= 1
                    heapq.heappush(heap, (-magl[j], j))
            if col != 0:
                j = i - 1
                if not done_l[j]:
                    phase_l[j] = ph - 0.5 * (tg[i] + tg[j])
                    done_l[j] = True
                    remaining -= 1
                    heapq.heappush(heap, (-magl[j], j))
    return np.array(phase_l).reshape(n_bins, n_frames)


def pghi_invert(spec: Spectrogram, refine_iters: int = PGHI_REFINE_ITERS) -> AudioClip:
    """Reconstruct audio from a log-magnitude spectrogram via PGHI.

    Heap-integrated phase is polished with ``refine_iters`` magnitude
    projection passes (Griffin-Lim style), which measurably tightens the
    round-trip log-magnitude error. Deterministic; an all-floor spectrogram
    maps to silence. Output length is the grid's canonical signal length
    (n_frames * hop_size samples).
    """
    params = spec.params
    if spec.values.max() <= spec.floor_db + 1e-9:
        return AudioClip(np.zeros(params.signal_length))
    mag = 10.0 ** (spec.values / 20.0)
    log_mag = spec.values * (math.log(10.0) / 20.0)
    tgrad, fgrad = _phase_gradients(log_mag, params)
    phase = _integrate_phase(mag, tgrad, fgrad)
    full_mag = np.zeros((params.stft_channels // 2 + 1, params.n_frames))
    full_mag[: params.n_bins] = mag
    coeff = np.zeros_like(full_mag, dtype=complex)
    coeff[: params.n_bins] = mag * np.exp(1j * phase)
    samples = istft(coeff, params)
    for _ in range(refine_iters):
        reana = gabor_stft_complex(AudioClip(np.clip(samples, -1.0, 1.0)), params)
        samples = istft(full_mag * np.exp(1j * np.angle(reana)), params)
    return AudioClip(np.clip(samples, -1.0, 1.0))


def threshold_mask(spec: Spectrogram, threshold_db: float) -> MaskedSpectrogram:
    """Keep-mask of cells at or above ``threshold_db``."""
    if threshold_db < spec.floor_db:
        raise ValueError("threshold_db must be at or above the spectrogram floor")
    return MaskedSpectrogram(spec, spec.values >= threshold_db, threshold_db)


def autocorr_features(maps: np.ndarray) -> AutocorrMap:
    """Linear (zero-padded FFT) autocorrelation of each feature map over time.

    Equals the direct time-domain autocorrelation sum_t f[t] f[t+lag] for
    lags 0..T-1; lag 0 is the map's energy and the maximum over lags.
    """
    maps = np.atleast_2d(np.asarray(maps, dtype=np.float64))
    if maps.size == 0:
        raise ValueError("empty feature maps")
    t = maps.shape[1]
    spectrum = np.fft.rfft(maps, n=2 * t, axis=1)
    full = np.fft.irfft(spectrum * np.conj(spectrum), n=2 * t, axis=1)
    return AutocorrMap(full[:, :t])


def autocorr_loss(a: AutocorrMap, a_ref: AutocorrMap) -> float:
    """Normalized squared autocorrelation mismatch: sum (A-A~)^2 / sum A~^2."""
    if a.values.shape != a_ref.values.shape:
        raise ValueError("autocorrelation maps must share a shape")
    denom = float(np.sum(a_ref.values ** 2))
    if denom <= 1e-300:
        raise ValueError("undefined normalization: reference autocorrelation is zero")
    return float(np.sum((a.values - a_ref.values) ** 2) / denom)


def log_filterbank(n_bands: int = 16, n_bins: int = 256,
                   sample_rate: int = DEFAULT_SAMPLE_RATE,
                   stft_channels: int = 512,
                   f_lo: float = 60.0, f_hi: float = 7800.0) -> np.ndarray:
    """Triangular filterbank on log-spaced center frequencies, rows sum to 1."""
    edges = np.geomspace(f_lo, f_hi, n_bands + 2)
    bin_freqs = np.arange(n_bins) * sample_rate / stft_channels
    fb = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        fb[b] = np.clip(np.minimum(up, down), 0.0, None)
        s = fb[b].sum()
        if s > 0:
            fb[b] /= s
    return fb


_FILTERBANKS: dict = {}


def get_filterbank(n_bands: int, n_bins: int) -> np.ndarray:
    key = (n_bands, n_bins)
    if key not in _FILTERBANKS:
        _FILTERBANKS[key] = log_filterbank(n_bands=n_bands, n_bins=n_bins)
    return _FILTERBANKS[key]


def spectrogram_feature_maps(values: np.ndarray, floor_db: float = FLOOR_DB,
                             n_bands: int = 16) -> np.ndarray:
    """Filterbank feature maps of a spectrogram, floored at zero for silence."""
    return get_filterbank(n_bands, values.shape[0]) @ (values - floor_db)
