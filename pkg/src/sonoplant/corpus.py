"""Bundled synthetic-speaker corpus.

Real speech corpora cannot be redistributed, so desk-scale runs use
seeded "speakers": each is a set of formant frequencies and levels, and
each utterance strings together syllable-length cells that activate a
random subset of those formants, under per-utterance vocal-effort,
spectral-tilt, and tract-length variation, plus speech-band noise.

The knobs are tuned against the builtin scorer: same-speaker cosines
spread over roughly 0.92-0.99, cross-speaker ones stay below ~0.94 (a
minimum between-profile distance is enforced when drawing speakers), so
calibrated thresholds land near 0.92 rather than degenerate 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import butter, sosfilt

from .audio import AudioClip

FORMANT_RANGE_HZ = (230.0, 3500.0)
FORMANT_MIN_SPACING_HZ = 300.0
PROFILE_MIN_DIST = 0.22  # mean log-frequency gap between nearest formants


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    formants_hz: tuple[float, ...]
    levels: tuple[float, ...]


@lru_cache(maxsize=4)
def _noise_sos(rate: int):
    return butter(4, 3600.0, btype="low", fs=rate, output="sos")


def _profile_dist(a, b) -> float:
    d1 = np.mean([min(abs(np.log(f) - np.log(g)) for g in b) for f in a])
    d2 = np.mean([min(abs(np.log(f) - np.log(g)) for g in a) for f in b])
    return float((d1 + d2) / 2.0)


def make_profiles(seed: int, count: int,
                  min_dist: float = PROFILE_MIN_DIST) -> list[SpeakerProfile]:
    """Draw `count` speaker profiles, rejecting ones whose formant sets sit
    too close to an already drawn speaker."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 977]))
    profiles: list[SpeakerProfile] = []
    guard = 0
    while len(profiles) < count:
        guard += 1
        if guard > 10000:
            raise RuntimeError("cannot place this many distinct speakers; "
                               "lower min_dist or count")
        k = int(rng.integers(4, 7))
        freqs: list[float] = []
        while len(freqs) < k:
            f = float(rng.uniform(*FORMANT_RANGE_HZ))
            if all(abs(f - g) > FORMANT_MIN_SPACING_HZ for g in freqs):
                freqs.append(f)
        if any(_profile_dist(freqs, p.formants_hz) <= min_dist for p in profiles):
            continue
        levels = tuple(float(rng.uniform(0.4, 1.0)) for _ in freqs)
        profiles.append(SpeakerProfile(f"spk{len(profiles)}", tuple(freqs), levels))
    return profiles


def make_utterance(profile: SpeakerProfile, rng: np.random.Generator,
                   duration_s: float, rate: int = 16000) -> AudioClip:
    """One seeded utterance of syllable cells over the speaker's formants."""
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    y = np.zeros(n)
    k = len(profile.formants_hz)
    scale = 1.0 + rng.uniform(-0.07, 0.07)   # tract-length-like shift
    tilt = rng.uniform(-0.8, 0.8)            # per-utterance spectral slope
    bias = rng.dirichlet(np.ones(k) * 0.9)   # per-utterance phoneme bias
    noise = rng.uniform(0.003, 0.025)
    pos = 0
    while pos < n:
        seg_len = int(rng.uniform(0.15, 0.35) * rate)
        end = min(n, pos + seg_len)
        tt = t[pos:end]
        active = rng.choice(k, size=int(rng.integers(2, k + 1)), replace=False)
        seg = np.zeros(end - pos)
        for ai in active:
            f = profile.formants_hz[ai]
            fj = f * scale * (1.0 + rng.uniform(-0.02, 0.02))
            aj = (profile.levels[ai] * (0.4 + 2.0 * bias[ai])
                  * rng.uniform(0.5, 1.5) * (f / 1000.0) ** tilt)
            seg += aj * np.sin(2.0 * np.pi * fj * tt + rng.uniform(0.0, 2.0 * np.pi))
        w = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(end - pos) / (end - pos)))
        y[pos:end] = seg * (0.15 + 0.85 * w)
        pos = end
    # speech-band noise; keeping it under ~3.6 kHz matters so the floor
    # looks like something a demodulated baseband could also produce
    y += sosfilt(_noise_sos(rate), noise * rng.standard_normal(n))
    y = _session_eq(y, rng, rate)
    # broadband recording floor: keeps every mel band off the log floor,
    # which is what makes quantization-level perturbations a non-event
    y += 1.2e-2 * rng.standard_normal(n)
    y *= 0.7 * rng.uniform(0.75, 1.2) / np.max(np.abs(y))
    return AudioClip(y, rate)


def _session_eq(y: np.ndarray, rng: np.random.Generator, rate: int) -> np.ndarray:
    """Smooth random EQ over the whole utterance: the session/channel
    variability real recordings have, and the main source of within-
    speaker score spread."""
    from scipy.signal import fftconvolve, firwin2

    coefs = rng.normal(0.0, 0.38, size=4)
    grid = np.linspace(0.0, rate / 2.0, 65)
    fn = grid / 4000.0
    log_gain = sum(c * np.cos(np.pi * (j + 1) * fn)
                   for j, c in enumerate(coefs))
    # real session chains do not boost the subsonic band; pinning the EQ
    # to unity below ~80 Hz keeps the lowest mel filters stable
    blend = np.clip((grid - 80.0) / (250.0 - 80.0), 0.0, 1.0)
    gain = np.exp(log_gain * blend)
    taps = firwin2(129, grid, gain, fs=rate)
    out = fftconvolve(y, taps, mode="full")
    return out[64:64 + len(y)]


def generate_speaker_clips(seed: int, idx: int, count: int,
                           duration_range: tuple[float, float] = (4.0, 6.0),
                           rate: int = 16000, stream: int = 0,
                           n_speakers: int | None = None) -> list[AudioClip]:
    """Clips for speaker `idx` out of a pool of `n_speakers` profiles
    (defaults to idx+1, enough to place the requested speaker)."""
    pool = make_profiles(seed, n_speakers if n_speakers is not None else idx + 1)
    profile = pool[idx]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31337, idx, stream]))
    return [make_utterance(profile, rng, float(rng.uniform(*duration_range)), rate)
            for _ in range(count)]
