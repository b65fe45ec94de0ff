"""Cepstral feature chain."""

import numpy as np
import pytest

from sonoplant.audio import AudioClip
from sonoplant.features import (DEFAULT_FEATURES, FeatureConfig,
                                filter_center_freqs, mel_energies,
                                mel_filterbank, mfcc_features)

RATE = 16000


def tone(freq, dur=1.0, amp=0.3):
    t = np.arange(int(dur * RATE)) / RATE
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), RATE)


def test_silence_features_zero_after_cmn():
    clip = AudioClip(np.zeros(RATE), RATE)
    feats = mfcc_features(clip)
    assert feats.frames.shape[1] == 20
    # constant input: every frame identical, CMN zeroes everything
    np.testing.assert_allclose(feats.frames, 0.0, atol=1e-9)
    energies = mel_energies(clip)
    assert np.all(energies <= DEFAULT_FEATURES.log_floor + 1e-12)


def test_tone_hits_expected_mel_filter():
    # oracle: rebuild the filterbank independently and find which filter's
    # triangle contains 1 kHz with the largest weight
    clip = tone(1000.0)
    energies = mel_energies(clip).mean(axis=0)
    fb = mel_filterbank(40, 512, RATE)
    bin_freqs = np.arange(512 // 2 + 1) * RATE / 512
    k = np.argmin(np.abs(bin_freqs - 1000.0))
    oracle_filter = int(np.argmax(fb[:, k]))
    assert int(np.argmax(energies)) == oracle_filter


def test_cmn_zero_mean_invariant():
    rng = np.random.default_rng(0)
    clip = AudioClip(rng.uniform(-0.5, 0.5, RATE * 2), RATE)
    feats = mfcc_features(clip)
    np.testing.assert_allclose(feats.frames.mean(axis=0), 0.0, atol=1e-9)


def test_frame_count_formula():
    cfg = DEFAULT_FEATURES
    frame_len = int(round(cfg.frame_len_s * RATE))
    hop = int(round(cfg.hop_s * RATE))
    for n in (frame_len, frame_len + 1, frame_len + hop, RATE, RATE + 37):
        clip = AudioClip(np.random.default_rng(n).uniform(-0.1, 0.1, n), RATE)
        feats = mfcc_features(clip)
        assert feats.frames.shape[0] == 1 + (n - frame_len) // hop


def test_gain_invariance():
    rng = np.random.default_rng(1)
    t = np.arange(RATE) / RATE
    x = np.zeros(RATE)
    for f in rng.uniform(200, 3800, 6):
        x += 0.1 * np.sin(2 * np.pi * f * t)
    x += 0.01 * rng.standard_normal(RATE)
    for cmn in (True, False):
        cfg = FeatureConfig(cmn=cmn)
        base = mfcc_features(AudioClip(x, RATE), cfg).frames
        for alpha in (0.25, 0.5, 1.0):
            scaled = mfcc_features(AudioClip(alpha * x, RATE), cfg).frames
            np.testing.assert_allclose(scaled, base, atol=1e-6)


def test_rejects_short_clip():
    with pytest.raises(ValueError):
        mfcc_features(AudioClip(np.zeros(100), RATE))


def test_deterministic():
    rng = np.random.default_rng(2)
    x = rng.uniform(-0.3, 0.3, RATE)
    a = mfcc_features(AudioClip(x, RATE)).frames
    b = mfcc_features(AudioClip(x.copy(), RATE)).frames
    assert np.array_equal(a, b)


def test_filterbank_covers_band():
    fb = mel_filterbank(40, 512, RATE)
    assert fb.shape == (40, 257)
    assert np.all(fb >= 0)
    centers = filter_center_freqs(40, RATE)
    assert centers[0] > 0 and centers[-1] < RATE / 2
    assert np.all(np.diff(centers) > 0)
