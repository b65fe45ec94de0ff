"""Cepstral feature extraction for the builtin voiceprint scorer.

Standard chain: pre-emphasis, Hann-windowed frames, magnitude spectrum,
triangular mel filterbank, log with floor, DCT-II, coefficient 0 dropped,
cepstral mean normalization. Dropping c0 plus CMN makes the features
invariant to global gain, which the loudness augmentation relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from .audio import AudioClip


@dataclass(frozen=True)
class FeatureConfig:
    frame_len_s: float = 0.025
    hop_s: float = 0.010
    num_filters: int = 40
    num_coeffs: int = 20
    pre_emphasis: float = 0.97
    log_floor: float = 1e-10
    nfft: int = 512
    cmn: bool = True
    # area-normalized triangles make a white noise floor read as a flat
    # band level, so a single scalar log floor is meaningful across bands
    unit_area_filters: bool = False
    # when > 0, the log floor is also raised to this fraction of the
    # utterance's mean band energy: an AGC-like noise-floor prior that is
    # exactly gain-invariant and clamps "almost empty" and "faintly
    # filled" bands to the same reading
    relative_floor: float = 0.0


DEFAULT_FEATURES = FeatureConfig()


@dataclass(frozen=True)
class FeatureFrameSet:
    frames: np.ndarray  # (num_frames, num_coeffs)
    frame_len_s: float
    hop_s: float
    num_coeffs: int


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(num_filters: int, nfft: int, rate: int,
                   unit_area: bool = False) -> np.ndarray:
    """Triangular filters over [0, rate/2], rows (num_filters, nfft//2+1)."""
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(rate / 2.0), num_filters + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bin_freqs = np.arange(nfft // 2 + 1) * rate / nfft
    fb = np.zeros((num_filters, nfft // 2 + 1))
    for i in range(num_filters):
        lo, center, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    if unit_area:
        fb = fb / np.maximum(fb.sum(axis=1, keepdims=True), 1e-12)
    return fb


def filter_center_freqs(num_filters: int, rate: int) -> np.ndarray:
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(rate / 2.0), num_filters + 2)
    return _mel_to_hz(mel_pts)[1:-1]


def _frames(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    num = 1 + (len(x) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(num)[:, None]
    return x[idx]


def mel_energies(x: AudioClip, cfg: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """Pre-log mel filter energies, rows one per frame."""
    frame_len = int(round(cfg.frame_len_s * x.rate))
    hop = int(round(cfg.hop_s * x.rate))
    if len(x) < frame_len:
        raise ValueError(
            f"clip of {len(x)} samples is shorter than one {frame_len}-sample frame")
    s = x.samples
    emph = np.concatenate(([s[0]], s[1:] - cfg.pre_emphasis * s[:-1]))
    frames = _frames(emph, frame_len, hop) * np.hanning(frame_len)
    mag = np.abs(np.fft.rfft(frames, n=cfg.nfft, axis=1))
    fb = mel_filterbank(cfg.num_filters, cfg.nfft, x.rate,
                        unit_area=cfg.unit_area_filters)
    return mag @ fb.T


def mfcc_features(x: AudioClip, cfg: FeatureConfig = DEFAULT_FEATURES) -> FeatureFrameSet:
    energies = mel_energies(x, cfg)
    floor = cfg.log_floor
    if cfg.relative_floor > 0.0:
        floor = max(floor, cfg.relative_floor * float(np.mean(energies)))
    logs = np.log(np.maximum(energies, floor))
    cepstra = dct(logs, type=2, norm="ortho", axis=1)
    coeffs = cepstra[:, 1:cfg.num_coeffs + 1]
    if cfg.cmn:
        coeffs = coeffs - np.mean(coeffs, axis=0, keepdims=True)
    return FeatureFrameSet(frames=coeffs, frame_len_s=cfg.frame_len_s,
                           hop_s=cfg.hop_s, num_coeffs=cfg.num_coeffs)
