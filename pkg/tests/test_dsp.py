"""Waveform-level operations: synthesis, channel, placement, mixing."""

import math

import numpy as np
import pytest

from sonoplant.audio import AudioClip
from sonoplant.dsp import (ChannelConfig, ResponseTable, TriggerParams,
                           attenuate, attenuation_factor, capture_baseband,
                           mix, nonlinear_demodulate, precompensate,
                           rir_convolve, shift_place, simulate_capture,
                           ssb_modulate, synthesize_trigger, synthetic_rir)

RATE = 16000


def hann_spectrum(clip):
    s = clip.samples * np.hanning(len(clip))
    mag = np.abs(np.fft.rfft(s))
    freqs = np.fft.rfftfreq(len(clip), 1.0 / clip.rate)
    return freqs, mag


def band_peak(freqs, mag, f0, width=40.0):
    sel = (freqs > f0 - width) & (freqs < f0 + width)
    return mag[sel].max()


def band_power(freqs, mag, lo, hi):
    sel = (freqs >= lo) & (freqs < hi)
    return float(np.sum(mag[sel] ** 2))


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

def test_audio_clip_rejects_nonfinite():
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0, np.nan]), RATE)
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0, np.inf]), RATE)
    with pytest.raises(ValueError):
        AudioClip(np.zeros(4), 0)


def test_audio_clip_immutable():
    clip = AudioClip(np.zeros(8), RATE)
    with pytest.raises(ValueError):
        clip.samples[0] = 1.0


def test_trigger_params_validation():
    ok = TriggerParams(2, 2, 0.5, np.full((2, 2), 0.5), np.full((2, 2), 100.0))
    assert ok.dimensionality == 4
    with pytest.raises(ValueError):
        TriggerParams(2, 2, 0.5, np.full((2, 2), 1.5), np.full((2, 2), 100.0))
    with pytest.raises(ValueError):
        TriggerParams(2, 2, 0.5, np.full((2, 2), 0.5), np.full((2, 2), 4000.0))
    with pytest.raises(ValueError):
        TriggerParams(2, 2, 0.5, np.full((2, 2), 0.5), np.full((2, 2), 0.0))
    with pytest.raises(ValueError):
        TriggerParams(2, 3, 0.5, np.full((2, 2), 0.5), np.full((2, 2), 100.0))


def test_channel_config_invariants():
    with pytest.raises(ValueError):
        ChannelConfig(hi_rate_hz=48000)  # 2*(25k+4k) > 48k
    with pytest.raises(ValueError):
        ChannelConfig(atten_exp=2.5)
    ChannelConfig(atten_exp=1.0)
    ChannelConfig(atten_exp=2.0)


def test_response_table_invariants():
    with pytest.raises(ValueError):
        ResponseTable(((0.0, 1.0), (0.0, 1.0)))
    with pytest.raises(ValueError):
        ResponseTable(((0.0, 1.0), (100.0, -0.5)))


# ---------------------------------------------------------------------------
# synthesize_trigger
# ---------------------------------------------------------------------------

def test_synthesize_analytic_sample():
    # 0.5*sin(2*pi*1000*t) at sample 4 of 16 kHz: phase pi/2 -> 0.5; the
    # 5 ms end ramp covers only the last half of the 10 ms segment
    p = TriggerParams(1, 1, 0.01, np.array([[0.5]]), np.array([[1000.0]]))
    clip = synthesize_trigger(p, RATE)
    assert len(clip) == 160
    assert clip.samples[4] == pytest.approx(0.5, abs=1e-12)


def test_synthesize_zero_amps():
    p = TriggerParams(2, 3, 0.05, np.zeros((2, 3)), np.full((2, 3), 500.0))
    clip = synthesize_trigger(p, RATE)
    assert len(clip) == 2 * int(0.05 * RATE)
    assert np.all(clip.samples == 0.0)


def test_synthesize_segment_fft_peaks():
    # per-segment FFT magnitude peaks land on that segment's frequencies
    rng = np.random.default_rng(42)
    freqs = np.array([[700.0, 2400.0], [1200.0, 3300.0]])
    amps = np.array([[0.4, 0.5], [0.6, 0.3]])
    p = TriggerParams(2, 2, 0.5, amps, freqs)
    clip = synthesize_trigger(p, RATE)
    seg = int(0.5 * RATE)
    for m in range(2):
        segment = clip.samples[m * seg:(m + 1) * seg]
        mag = np.abs(np.fft.rfft(segment * np.hanning(seg)))
        fbin = RATE / seg
        order = np.argsort(mag)[::-1]
        top = set()
        for idx in order:
            f = idx * fbin
            if all(abs(f - t) > 3 * fbin for t in top):
                top.add(f)
            if len(top) == 2:
                break
        for f_true in freqs[m]:
            assert min(abs(f_true - f) for f in top) <= fbin


def test_synthesize_rejects_sub_nyquist_rate():
    p = TriggerParams(1, 1, 0.01, np.array([[0.5]]), np.array([[3000.0]]))
    with pytest.raises(ValueError):
        synthesize_trigger(p, 4000)


def test_synthesize_segment_boundary_ramp():
    # the last sample of each segment is ramped to exactly zero
    p = TriggerParams(2, 1, 0.05, np.array([[0.9], [0.9]]),
                      np.array([[1537.0], [2213.0]]))
    clip = synthesize_trigger(p, RATE)
    seg = int(0.05 * RATE)
    assert clip.samples[seg - 1] == pytest.approx(0.0, abs=1e-12)
    assert clip.samples[-1] == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# ssb_modulate
# ---------------------------------------------------------------------------

def test_ssb_silence_is_pure_carrier():
    chan = ChannelConfig()
    ultra = ssb_modulate(AudioClip(np.zeros(RATE), RATE), chan)
    freqs, mag = hann_spectrum(ultra)
    assert freqs[np.argmax(mag)] == pytest.approx(25000.0, abs=2.0)
    total = np.sum(mag ** 2)
    carrier = band_power(freqs, mag, 24900, 25100)
    assert carrier / total > 0.999


def test_ssb_tone_upper_sideband():
    chan = ChannelConfig()
    t = np.arange(RATE) / RATE
    m = AudioClip(0.5 * np.cos(2 * np.pi * 1000.0 * t), RATE)
    ultra = ssb_modulate(m, chan)
    freqs, mag = hann_spectrum(ultra)
    upper = band_peak(freqs, mag, 26000.0)
    lower = band_peak(freqs, mag, 24000.0)
    carrier = band_peak(freqs, mag, 25000.0)
    assert 20 * math.log10(lower / upper) <= -30.0
    assert carrier > 0.5 * upper  # transmitted carrier present


def test_ssb_inaudibility():
    chan = ChannelConfig()
    rng = np.random.default_rng(3)
    t = np.arange(RATE) / RATE
    m = np.zeros(RATE)
    for f in rng.uniform(100, 3900, size=8):
        m += 0.1 * np.sin(2 * np.pi * f * t)
    ultra = ssb_modulate(AudioClip(m, RATE), chan)
    freqs, mag = hann_spectrum(ultra)
    leak = band_power(freqs, mag, 0, 20000) / np.sum(mag ** 2)
    assert 10 * math.log10(leak) <= -40.0


def test_ssb_rejects_wide_baseband():
    chan = ChannelConfig()
    wide = AudioClip(np.zeros(96000), 96000)  # declared bandwidth 48 kHz
    with pytest.raises(ValueError):
        ssb_modulate(wide, chan)


# ---------------------------------------------------------------------------
# nonlinear_demodulate
# ---------------------------------------------------------------------------

def test_demod_pure_carrier_vanishes():
    chan = ChannelConfig()
    ultra = ssb_modulate(AudioClip(np.zeros(RATE), RATE), chan)
    out = nonlinear_demodulate(ultra, chan, RATE)
    in_rms = np.sqrt(np.mean(ultra.samples ** 2))
    out_rms = np.sqrt(np.mean(out.samples ** 2))
    assert out_rms <= 1e-3 * in_rms


def test_demod_recovers_tone():
    chan = ChannelConfig()
    t = np.arange(RATE) / RATE
    m = AudioClip(0.5 * np.cos(2 * np.pi * 1000.0 * t), RATE)
    out = nonlinear_demodulate(ssb_modulate(m, chan), chan, RATE)
    freqs, mag = hann_spectrum(out)
    fbin = RATE / len(out)
    assert abs(freqs[np.argmax(mag)] - 1000.0) <= fbin


def test_demod_rejects_upsampling():
    chan = ChannelConfig()
    ultra = AudioClip(np.zeros(9600), 96000)
    with pytest.raises(ValueError):
        nonlinear_demodulate(ultra, chan, 192000)


def test_demod_intermodulation_dsb_vs_ssb():
    """Square-law difference-frequency product at f2-f1.

    The DSB oracle is built line by line at the same per-component
    amplitude as the SSB output (the honest comparison for a component-
    count argument: DSB has two sideband pairs contributing at 500 Hz,
    SSB has one). Classic equal-baseband AM normalization would halve the
    DSB lines and reverse the direction.
    """
    chan = ChannelConfig()
    hi = chan.hi_rate_hz
    t16 = np.arange(RATE) / RATE
    f1, f2 = 1000.0, 1500.0
    m = 0.25 * np.cos(2 * np.pi * f1 * t16) + 0.25 * np.cos(2 * np.pi * f2 * t16)
    ssb = ssb_modulate(AudioClip(m, RATE), chan)

    t = np.arange(len(ssb)) / hi
    fc = chan.carrier_hz
    dsb = np.cos(2 * np.pi * fc * t)
    for f in (f1, f2):
        dsb = dsb + 0.25 * np.cos(2 * np.pi * (fc + f) * t)
        dsb = dsb + 0.25 * np.cos(2 * np.pi * (fc - f) * t)
    dsb = AudioClip(dsb, hi)

    out_ssb = nonlinear_demodulate(ssb, chan, RATE)
    out_dsb = nonlinear_demodulate(dsb, chan, RATE)
    fs_s, mag_s = hann_spectrum(out_ssb)
    fs_d, mag_d = hann_spectrum(out_dsb)
    im_ssb = band_peak(fs_s, mag_s, 500.0, width=20.0)
    im_dsb = band_peak(fs_d, mag_d, 500.0, width=20.0)
    noise_floor = band_peak(fs_d, mag_d, 700.0, width=20.0)
    assert im_dsb > 5.0 * noise_floor  # the line exists in the DSB chain
    assert im_ssb < im_dsb


def test_channel_round_trip_sine_banks():
    # dominant audible line of demod(ssb(m)) is a line of m, 20 seeds
    chan = ChannelConfig()
    t = np.arange(RATE) / RATE
    fade = np.minimum(1.0, np.minimum(t, t[::-1]) / 0.005)
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        freqs_true = rng.uniform(200, 3800, size=5)
        m = np.zeros(RATE)
        for f in freqs_true:
            m += 0.15 * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        out = simulate_capture(AudioClip(m * fade, RATE), chan)
        freqs, mag = hann_spectrum(out)
        fbin = RATE / len(out)
        peak_f = freqs[np.argmax(mag)]
        assert min(abs(peak_f - f) for f in freqs_true) <= fbin


def test_capture_baseband_matches_full_chain():
    # the optimizer's carrier-free capture must agree with the full
    # SSB -> square-law -> lowpass chain (dual route kept on purpose)
    chan = ChannelConfig()
    rng = np.random.default_rng(21)
    t = np.arange(int(RATE * 2.3)) / RATE
    x = sum(0.12 * np.sin(2 * np.pi * f * t + rng.uniform(0, 6))
            for f in rng.uniform(120, 3900, 7))
    x += 0.01 * rng.standard_normal(len(t))
    clip = AudioClip(0.8 * x / np.max(np.abs(x)), RATE)
    full = simulate_capture(clip, chan)
    fast = capture_baseband(clip, chan)
    n = min(len(full), len(fast))
    resid = full.samples[:n] - fast.samples[:n]
    rel = np.sqrt(np.mean(resid ** 2) / np.mean(full.samples[:n] ** 2))
    assert rel < 1e-2


def test_capture_dither_deterministic():
    chan = ChannelConfig(capture_dither=0.003)
    clip = AudioClip(0.2 * np.sin(2 * np.pi * 500 * np.arange(RATE) / RATE),
                     RATE)
    a = capture_baseband(clip, chan)
    b = capture_baseband(clip, chan)
    assert np.array_equal(a.samples, b.samples)
    quiet = capture_baseband(clip, ChannelConfig())
    assert np.std(a.samples - np.pad(quiet.samples,
                                     (0, len(a) - len(quiet)))) > 1e-4


# ---------------------------------------------------------------------------
# attenuate
# ---------------------------------------------------------------------------

def test_attenuate_identity_at_zero():
    chan = ChannelConfig()
    clip = AudioClip(np.linspace(-0.5, 0.5, 64), RATE)
    out = attenuate(clip, 0.0, chan)
    assert np.array_equal(out.samples, clip.samples)


def test_attenuate_closed_form():
    # factors from 40-digit evaluation of exp(-a0 * (2*pi*25000)^2 * d)
    chan = ChannelConfig()
    expected = {
        0.0: 1.0,
        0.3: 0.86239311187576997945,
        1.0: 0.61049802526579716495,
        2.0: 0.37270783885343791358,
    }
    for d, want in expected.items():
        got = attenuation_factor(d, chan)
        assert got == pytest.approx(want, rel=1e-12)


def test_attenuate_monotone_in_distance():
    chan = ChannelConfig()
    factors = [attenuation_factor(d, chan) for d in (0.0, 0.5, 1.0, 1.7, 2.0)]
    assert all(a > b for a, b in zip(factors, factors[1:]))


def test_attenuate_never_amplifies():
    chan = ChannelConfig()
    rng = np.random.default_rng(5)
    clip = AudioClip(rng.uniform(-1, 1, 256), RATE)
    for d in rng.uniform(0, 3, size=10):
        out = attenuate(clip, float(d), chan)
        assert np.all(np.abs(out.samples) <= np.abs(clip.samples) + 1e-15)


def test_attenuate_rejects_negative_distance():
    with pytest.raises(ValueError):
        attenuate(AudioClip(np.zeros(4), RATE), -0.1, ChannelConfig())


# ---------------------------------------------------------------------------
# shift_place
# ---------------------------------------------------------------------------

def test_shift_place_identity():
    clip = AudioClip(np.arange(8) / 10.0, RATE)
    out = shift_place(clip, 0.0, 8)
    assert np.array_equal(out.samples, clip.samples)


def test_shift_place_truncates():
    clip = AudioClip(np.ones(100) * 0.25, RATE)
    t_half = 50 / RATE
    out = shift_place(clip, t_half, 100)
    assert np.sum(out.samples != 0) == 50
    assert np.all(out.samples[50:] == 0.25)


def test_shift_place_sum_oracle():
    rng = np.random.default_rng(9)
    x = rng.uniform(-1, 1, 200)
    clip = AudioClip(x, RATE)
    start = 130
    out = shift_place(clip, start / RATE, 250)
    retained = x[:250 - start]
    assert np.sum(out.samples) == pytest.approx(np.sum(retained), rel=1e-12)


def test_shift_place_rejects_negative():
    with pytest.raises(ValueError):
        shift_place(AudioClip(np.zeros(4), RATE), -0.01, 10)


# ---------------------------------------------------------------------------
# mix
# ---------------------------------------------------------------------------

def test_mix_zero_trigger_identity():
    x = AudioClip(np.linspace(-0.4, 0.4, 64), RATE)
    p = AudioClip(np.zeros(64), RATE)
    out, ratio, rescale = mix(x, p, 1.0)
    assert np.array_equal(out.samples, x.samples)
    assert ratio == math.inf
    assert rescale == 1.0


def test_mix_power_ratio():
    rng = np.random.default_rng(2)
    x = rng.normal(0, 0.1, 4096)
    x = x / np.sqrt(np.mean(x ** 2)) * 0.1
    p = rng.normal(0, 0.1, 4096)
    p = p / np.sqrt(np.mean(p ** 2)) * 0.1
    _, ratio, _ = mix(AudioClip(x, RATE), AudioClip(p, RATE), 2.0)
    assert ratio == pytest.approx(4.0, rel=1e-9)


def test_mix_peak_rescale():
    x = AudioClip(np.full(32, 0.9), RATE)
    p = AudioClip(np.full(32, 0.9), RATE)
    out, ratio, rescale = mix(x, p, 1.0)
    assert np.max(np.abs(out.samples)) == pytest.approx(1.0, abs=1e-12)
    assert rescale == pytest.approx(1.0 / 1.8, rel=1e-12)
    assert ratio == pytest.approx(1.0, rel=1e-12)


def test_mix_linearity_before_rescale():
    rng = np.random.default_rng(3)
    x1, x2, p = (rng.uniform(-0.05, 0.05, 128) for _ in range(3))
    a = mix(AudioClip(x1 + x2, RATE), AudioClip(p, RATE), 0.7)
    b1 = mix(AudioClip(x1, RATE), AudioClip(np.zeros(128), RATE), 0.7)
    b2 = mix(AudioClip(x2, RATE), AudioClip(p, RATE), 0.7)
    assert a.rescale == 1.0 and b1.rescale == 1.0 and b2.rescale == 1.0
    np.testing.assert_allclose(a.clip.samples,
                               b1.clip.samples + b2.clip.samples, atol=1e-15)


def test_mix_rejects_mismatch():
    with pytest.raises(ValueError):
        mix(AudioClip(np.zeros(4), RATE), AudioClip(np.zeros(5), RATE), 1.0)
    with pytest.raises(ValueError):
        mix(AudioClip(np.zeros(4), RATE), AudioClip(np.zeros(4), 8000), 1.0)


# ---------------------------------------------------------------------------
# rir_convolve / synthetic_rir
# ---------------------------------------------------------------------------

def test_rir_unit_impulse_identity():
    rng = np.random.default_rng(4)
    x = AudioClip(rng.uniform(-0.5, 0.5, 256), RATE)
    rir = AudioClip(np.concatenate(([1.0], np.zeros(15))), RATE)
    out = rir_convolve(x, rir)
    np.testing.assert_allclose(out.samples, x.samples, atol=1e-12)


def test_rir_delayed_scaled_impulse():
    rng = np.random.default_rng(4)
    x = AudioClip(rng.uniform(-0.5, 0.5, 256), RATE)
    h = np.zeros(16)
    h[5] = 0.5
    out = rir_convolve(x, AudioClip(h, RATE))
    np.testing.assert_allclose(out.samples[5:], 0.5 * x.samples[:-5], atol=1e-12)
    np.testing.assert_allclose(out.samples[:5], 0.0, atol=1e-12)


def test_rir_energy_parseval_oracle():
    # unit-energy synthetic RIR: output energy ~= input energy for long
    # white inputs (flat average spectrum)
    rng = np.random.default_rng(11)
    x = AudioClip(rng.normal(0, 0.02, RATE * 16), RATE)
    rir = synthetic_rir(RATE, 0.4, seed=2)
    assert np.sum(rir.samples ** 2) == pytest.approx(1.0, rel=1e-9)
    out = rir_convolve(x, rir)
    e_in = np.sum(x.samples ** 2)
    e_out = np.sum(out.samples ** 2)
    assert e_out == pytest.approx(e_in, rel=0.01)


def test_rir_rejects_rate_mismatch():
    with pytest.raises(ValueError):
        rir_convolve(AudioClip(np.zeros(8), RATE), AudioClip(np.zeros(4), 8000))


# ---------------------------------------------------------------------------
# precompensate
# ---------------------------------------------------------------------------

def test_precompensate_flat_identity():
    rng = np.random.default_rng(6)
    t = np.arange(RATE) / RATE
    x = np.zeros(RATE)
    for f in (400.0, 1000.0, 2500.0):
        x += 0.2 * np.sin(2 * np.pi * f * t)
    clip = AudioClip(x, RATE)
    flat = ResponseTable.flat(1.0, f_max=8000.0)
    out = precompensate(clip, flat, flat)
    err = out.samples - clip.samples
    err_db = 10 * math.log10(np.mean(err ** 2) / np.mean(clip.samples ** 2))
    assert err_db <= -40.0


def test_precompensate_boost_oracle():
    # mic 0.5, path 1.0 -> in-band tones doubled (tone-probe oracle)
    t = np.arange(RATE) / RATE
    tone = AudioClip(0.2 * np.sin(2 * np.pi * 1000.0 * t), RATE)
    mic = ResponseTable.flat(0.5, f_max=8000.0)
    path = ResponseTable.flat(1.0, f_max=8000.0)
    out = precompensate(tone, mic, path)
    mid = slice(RATE // 4, 3 * RATE // 4)
    gain = np.sqrt(np.mean(out.samples[mid] ** 2) / np.mean(tone.samples[mid] ** 2))
    assert gain == pytest.approx(2.0, rel=0.05)


def test_precompensate_epsilon_floor():
    # a dead mic band cannot push filter gain beyond path/(0.05*max_mic)
    mic = ResponseTable(((0.0, 1.0), (900.0, 1.0), (1000.0, 0.0),
                         (1100.0, 1.0), (8000.0, 1.0)))
    path = ResponseTable.flat(1.0, f_max=8000.0)
    t = np.arange(RATE) / RATE
    tone = AudioClip(0.05 * np.sin(2 * np.pi * 1000.0 * t), RATE)
    out = precompensate(tone, mic, path)
    mid = slice(RATE // 4, 3 * RATE // 4)
    gain = np.sqrt(np.mean(out.samples[mid] ** 2) / np.mean(tone.samples[mid] ** 2))
    assert gain <= 1.0 / 0.05 + 1e-6


def test_precompensate_rejects_short_table():
    short = ResponseTable(((0.0, 1.0), (2000.0, 1.0)))
    flat = ResponseTable.flat(1.0, f_max=8000.0)
    clip = AudioClip(np.zeros(RATE), RATE)
    with pytest.raises(ValueError):
        precompensate(clip, short, flat)
    with pytest.raises(ValueError):
        precompensate(clip, flat, short)


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_operations_deterministic():
    rng = np.random.default_rng(8)
    amps = rng.uniform(0, 1, (3, 4))
    freqs = rng.uniform(100, 3900, (3, 4))
    p = TriggerParams(3, 4, 0.1, amps, freqs)
    chan = ChannelConfig()
    a = synthesize_trigger(p, RATE)
    b = synthesize_trigger(p, RATE)
    assert np.array_equal(a.samples, b.samples)
    ua = ssb_modulate(a, chan)
    ub = ssb_modulate(b, chan)
    assert np.array_equal(ua.samples, ub.samples)
    da = nonlinear_demodulate(ua, chan, RATE)
    db = nonlinear_demodulate(ub, chan, RATE)
    assert np.array_equal(da.samples, db.samples)
