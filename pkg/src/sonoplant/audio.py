"""Mono waveform container and basic signal utilities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly


@dataclass(frozen=True)
class AudioClip:
    """A mono sampled waveform. Samples are float64, nominally in [-1, 1].

    Immutable: the sample buffer is marked read-only on construction so
    clips can be shared freely between concurrent workers.
    """

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples contain NaN or Inf")
        if int(self.rate) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.rate}")
        if x is self.samples and x.flags.writeable:
            x = x.copy()
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "rate", int(self.rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.rate

    @classmethod
    def silence(cls, n_samples: int, rate: int) -> "AudioClip":
        return cls(np.zeros(int(n_samples)), rate)


def rms(x: np.ndarray | AudioClip) -> float:
    s = x.samples if isinstance(x, AudioClip) else np.asarray(x)
    if s.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(s * s)))


def mean_power(x: np.ndarray | AudioClip) -> float:
    s = x.samples if isinstance(x, AudioClip) else np.asarray(x)
    if s.size == 0:
        return 0.0
    return float(np.mean(s * s))


def peak(x: np.ndarray | AudioClip) -> float:
    s = x.samples if isinstance(x, AudioClip) else np.asarray(x)
    if s.size == 0:
        return 0.0
    return float(np.max(np.abs(s)))


def resample(clip: AudioClip, new_rate: int) -> AudioClip:
    """Polyphase resampling. Identity when the rate already matches.

    Kaiser beta 12 keeps resampling images below roughly -90 dB, which the
    modulation chain needs so that upsampling artifacts do not leak into
    the audible band after mixing with the carrier.
    """
    new_rate = int(new_rate)
    if new_rate <= 0:
        raise ValueError(f"target rate must be positive, got {new_rate}")
    if new_rate == clip.rate:
        return clip
    g = math.gcd(new_rate, clip.rate)
    up, down = new_rate // g, clip.rate // g
    y = resample_poly(clip.samples, up, down, window=("kaiser", 12.0))
    return AudioClip(y, new_rate)
