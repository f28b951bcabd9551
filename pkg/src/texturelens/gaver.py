"""Parametric synthesis of query sounds from physical event descriptions.

Two event models: modal impacts (damped sinusoid partials, controlling
material hardness via damping and object size via partial frequencies) and
band-passed, faded Gaussian noise. Event sequences superpose shifted event
renders. On top of those, labeled example clusters for the four semantic
attributes (brightness, rate, impact type, fill level) with presence and
absence parameter ranges that are disjoint under the feature oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, AudioClip

ATTRIBUTES = ("brightness", "rate", "impact_type", "fill_level")

DEFAULT_CLIP_SECONDS = 2.0
PEAK_NORM = 0.9

# attribute frequency territories, shared with the planted generator so that
# query sounds and planted edits express the same physical signatures
BRIGHT_BAND = (4700.0, 6600.0)
DULL_BAND = (100.0, 170.0)
RATE_BAND = (1000.0, 2000.0)
IMPACT_BAND = (2500.0, 3300.0)
FILL_SWEEP = (300.0, 1200.0)
# raised-cosine onset applied to noise events; mathematical step onsets smear
# broadband energy across the whole analysis grid
NOISE_ATTACK_S = 0.008
# cluster clips get the same treatment at the clip boundary: an event tail
# truncated mid-ring splashes a broadband stripe into the final frames
CLUSTER_RELEASE_S = 0.024


def t60_to_delta(t60: float) -> float:
    """Damping constant reaching -60 dB at ``t60`` seconds (delta < 0)."""
    return -np.log(1000.0) / t60


@dataclass(frozen=True)
class ModalParams:
    """Damped sinusoid partials: (amplitude, damping < 0, angular freq)."""

    partials: tuple

    def __post_init__(self):
        partials = tuple((float(p), float(d), float(w)) for p, d, w in self.partials)
        if not partials:
            raise ValueError("at least one partial required")
        for phi, delta, omega in partials:
            if phi < 0:
                raise ValueError("partial amplitude must be >= 0")
            if delta >= 0:
                raise ValueError("damping constant must be negative")
            if not 0 < omega < np.pi * DEFAULT_SAMPLE_RATE:
                raise ValueError("partial frequency out of range")
        object.__setattr__(self, "partials", partials)


@dataclass(frozen=True)
class NoiseImpactParams:
    """Band-passed Gaussian noise shaped by a fade envelope."""

    band_low: float
    band_high: float
    fade: str = "exponential"  # or "linear"
    decay_time: float = 0.1
    amplitude: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.band_low < self.band_high < DEFAULT_SAMPLE_RATE / 2:
            raise ValueError("band edges must satisfy 0 < low < high < Nyquist")
        if self.fade not in ("linear", "exponential"):
            raise ValueError("fade must be linear or exponential")
        if self.decay_time <= 0:
            raise ValueError("decay time must be positive")


@dataclass(frozen=True)
class EventSequence:
    """Onset-sorted events rendered into one clip."""

    events: tuple
    clip_duration: float = DEFAULT_CLIP_SECONDS

    def __post_init__(self):
        events = tuple(self.events)
        for onset, _ in events:
            if not 0 <= onset < self.clip_duration:
                raise ValueError("event onset outside the clip")
        if any(events[i][0] > events[i + 1][0] for i in range(len(events) - 1)):
            raise ValueError("events must be sorted by onset")
        object.__setattr__(self, "events", events)


@dataclass(frozen=True)
class AttributeSpec:
    """Request for a labeled example cluster of one semantic attribute."""

    attribute: str
    presence: bool
    n_examples: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.attribute not in ATTRIBUTES:
            raise ValueError(f"unknown attribute {self.attribute!r}; expected one of {ATTRIBUTES}")
        if self.n_examples < 1:
            raise ValueError("n_examples must be >= 1")


def synth_modal(params: ModalParams, duration: float = DEFAULT_CLIP_SECONDS,
                sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Sum of damped cosine partials, peak-normalized to 0.9 if clipping."""
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    samples = np.zeros_like(t)
    for phi, delta, omega in params.partials:
        samples += phi * np.exp(delta * t) * np.cos(omega * t)
    peak = np.abs(samples).max()
    if peak > 1.0:
        samples *= PEAK_NORM / peak
    return AudioClip(samples, sample_rate)


def synth_noise_impact(params: NoiseImpactParams, duration: float = DEFAULT_CLIP_SECONDS,
                       sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Band-limited noise under a fade envelope, deterministic per seed."""
    n = int(round(duration * sample_rate))
    if params.amplitude == 0:
        return AudioClip(np.zeros(n), sample_rate)
    rng = np.random.default_rng(params.seed)
    noise = rng.standard_normal(n)
    spectrum = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spectrum[(freqs < params.band_low) | (freqs > params.band_high)] = 0.0
    noise = np.fft.irfft(spectrum, n)
    t = np.arange(n) / sample_rate
    if params.fade == "linear":
        env = np.clip(1.0 - t / params.decay_time, 0.0, None)
    else:
        env = np.exp(t60_to_delta(params.decay_time) * t)
    attack = min(NOISE_ATTACK_S, params.decay_time / 4.0)
    if attack > 0:
        ramp = t < attack
        env[ramp] *= 0.5 * (1.0 - np.cos(np.pi * t[ramp] / attack))
    samples = noise * env
    peak = np.abs(samples).max()
    if peak > 0:
        samples *= params.amplitude / peak
    return AudioClip(samples, sample_rate)


def _render_event(params, duration, sample_rate):
    if isinstance(params, ModalParams):
        return synth_modal(params, duration, sample_rate)
    if isinstance(params, NoiseImpactParams):
        return synth_noise_impact(params, duration, sample_rate)
    raise TypeError(f"unknown event params type {type(params)!r}")


def render_sequence(seq: EventSequence, sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Superpose per-event renders at their onsets."""
    n = int(round(seq.clip_duration * sample_rate))
    out = np.zeros(n)
    for onset, params in seq.events:
        start = int(round(onset * sample_rate))
        tail = (n - start) / sample_rate
        rendered = _render_event(params, tail, sample_rate).samples
        out[start:start + len(rendered)] += rendered
    peak = np.abs(out).max()
    if peak > 1.0:
        out *= PEAK_NORM / peak
    return AudioClip(out, sample_rate)


def _spread_onsets(rng, count, lo=0.1, hi=1.85, min_sep=0.12):
    """Jittered, well-separated onset times."""
    slots = np.linspace(lo, hi, count)
    jitter = (hi - lo) / max(count, 1) * 0.3
    onsets = np.sort(slots + rng.uniform(-jitter, jitter, count))
    onsets = np.clip(onsets, lo, hi)
    for i in range(1, count):
        onsets[i] = max(onsets[i], onsets[i - 1] + min_sep)
    return np.clip(onsets, lo, hi + 0.1)


def make_modal_impact(rng, band, n_partials=None, t60_range=(0.15, 0.4), amp=None):
    """Random inharmonic modal impact with partials log-spaced in ``band``."""
    lo, hi = band
    n_partials = n_partials or int(rng.integers(3, 9))
    f0 = rng.uniform(lo, lo * 1.3)
    ratios = np.geomspace(1.0, hi / f0, n_partials) * rng.uniform(0.98, 1.02, n_partials)
    freqs = np.clip(f0 * ratios, lo, hi)
    amp = amp if amp is not None else rng.uniform(0.5, 0.9)
    amps = amp * np.geomspace(1.0, 0.35, n_partials)
    t60 = rng.uniform(*t60_range)
    partials = tuple(
        (a, t60_to_delta(t60 * rng.uniform(0.7, 1.0)), 2 * np.pi * f)
        for a, f in zip(amps, freqs)
    )
    return ModalParams(partials)


def _noise_burst(rng, band, decay_range, amp_range=(0.5, 0.9)):
    return NoiseImpactParams(
        band_low=float(band[0]), band_high=float(band[1]), fade="exponential",
        decay_time=float(rng.uniform(*decay_range)),
        amplitude=float(rng.uniform(*amp_range)),
        seed=int(rng.integers(2 ** 31)))


def _brightness_clip(rng, presence, duration):
    band = BRIGHT_BAND if presence else DULL_BAND
    count = int(rng.integers(4, 7))
    events = tuple(
        (float(t), _noise_burst(rng, band, (0.2, 0.4)))
        for t in _spread_onsets(rng, count)
    )
    return EventSequence(events, duration)


def _rate_clip(rng, presence, duration):
    count = int(rng.integers(6, 11)) if presence else int(rng.integers(1, 3))
    events = tuple(
        (float(t), _noise_burst(rng, RATE_BAND, (0.04, 0.08), (0.6, 0.9)))
        for t in _spread_onsets(rng, count, min_sep=0.15)
    )
    return EventSequence(events, duration)


def _impact_type_clip(rng, presence, duration):
    if not presence:
        # sharp: two brief band-passed bursts
        events = tuple(
            (float(t), NoiseImpactParams(*IMPACT_BAND, fade="exponential",
                                         decay_time=float(rng.uniform(0.015, 0.03)),
                                         amplitude=float(rng.uniform(0.6, 0.9)),
                                         seed=int(rng.integers(2 ** 31))))
            for t in _spread_onsets(rng, 2, lo=0.2, hi=1.4, min_sep=0.5)
        )
        return EventSequence(events, duration)
    # scratchy: dense overlapping micro-bursts forming a sustained scrape
    start = rng.uniform(0.15, 0.4)
    scrape_len = rng.uniform(0.7, 1.4)
    t = start
    events = []
    while t < start + scrape_len:
        events.append((float(t), NoiseImpactParams(
            *IMPACT_BAND, fade="exponential",
            decay_time=float(rng.uniform(0.10, 0.18)),
            amplitude=float(rng.uniform(0.35, 0.6)),
            seed=int(rng.integers(2 ** 31)))))
        t += rng.uniform(0.05, 0.09)
    return EventSequence(tuple(events), duration)


def _fill_level_clip(rng, presence, duration):
    # fixed bed level: random bed gain would put per-clip noise on every
    # spectral band at once
    events = [(0.0, NoiseImpactParams(100.0, 7500.0, fade="linear",
                                      decay_time=duration * 2.5,
                                      amplitude=0.08,
                                      seed=int(rng.integers(2 ** 31))))]
    # resonance as a chain of narrow-band segments; frequency steps up for
    # "filling", stays put for "empty/steady"
    n_seg = 24
    f_start, f_end = FILL_SWEEP
    width = rng.uniform(45.0, 60.0)
    amp = 0.6
    for i in range(n_seg):
        onset = i * duration / n_seg
        frac = i / (n_seg - 1)
        fc = f_start + (f_end - f_start) * frac if presence else f_start
        fc *= rng.uniform(0.995, 1.005)
        events.append((float(onset), NoiseImpactParams(
            max(fc - width, 50.0), fc + width, fade="exponential",
            decay_time=float(duration / n_seg * rng.uniform(1.5, 2.2)),
            amplitude=float(amp * rng.uniform(0.95, 1.05)),
            seed=int(rng.integers(2 ** 31)))))
    events.sort(key=lambda e: e[0])
    return EventSequence(tuple(events), duration)


_CLUSTER_BUILDERS = {
    "brightness": _brightness_clip,
    "rate": _rate_clip,
    "impact_type": _impact_type_clip,
    "fill_level": _fill_level_clip,
}


def make_attribute_sequence(spec: AttributeSpec, index: int,
                            duration: float = DEFAULT_CLIP_SECONDS) -> EventSequence:
    """The event sequence for one cluster member, deterministic per seed."""
    rng = np.random.default_rng((spec.seed, hash(spec.attribute) & 0xFFFF, spec.presence, index))
    return _CLUSTER_BUILDERS[spec.attribute](rng, spec.presence, duration)


def _release(clip: AudioClip) -> AudioClip:
    n = int(CLUSTER_RELEASE_S * clip.sample_rate)
    samples = clip.samples.copy()
    if n and len(samples) > n:
        ramp = 0.5 * (1.0 + np.cos(np.pi * np.arange(n) / n))
        samples[-n:] *= ramp
    return AudioClip(samples, clip.sample_rate)


def make_attribute_cluster(spec: AttributeSpec,
                           duration: float = DEFAULT_CLIP_SECONDS,
                           sample_rate: int = DEFAULT_SAMPLE_RATE) -> list:
    """Labeled example clips for one attribute state."""
    return [
        _release(render_sequence(make_attribute_sequence(spec, i, duration), sample_rate))
        for i in range(spec.n_examples)
    ]
