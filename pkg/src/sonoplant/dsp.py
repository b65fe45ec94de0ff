"""Waveform-level operations: trigger synthesis, the ultrasound channel
(SSB modulation, square-law demodulation, attenuation), placement and
mixing, room reverberation, and response pre-compensation."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft, rfftfreq
from scipy.signal import fftconvolve, firwin2, hilbert

from .audio import AudioClip, mean_power, peak, resample
from .kernels import render_sine_bank

BASEBAND_RATE = 16000
TRIGGER_FREQ_LIMIT_HZ = 4000.0
SEGMENT_RAMP_S = 0.005


@dataclass(frozen=True)
class TriggerParams:
    """Sine-bank trigger: per-segment amplitude and frequency matrices.

    `amps` and `freqs_hz` are M x N; segment m renders the N sines
    freqs_hz[m, :] at amplitudes amps[m, :] for `segment_len_s` seconds.
    """

    segments_m: int
    freqs_n: int
    segment_len_s: float
    amps: np.ndarray
    freqs_hz: np.ndarray

    def __post_init__(self):
        m, n = int(self.segments_m), int(self.freqs_n)
        if m <= 0 or n <= 0:
            raise ValueError(f"segments_m and freqs_n must be positive, got {m}x{n}")
        if self.segment_len_s <= 0:
            raise ValueError("segment_len_s must be positive")
        a = np.array(self.amps, dtype=np.float64)
        f = np.array(self.freqs_hz, dtype=np.float64)
        if a.shape != (m, n) or f.shape != (m, n):
            raise ValueError(
                f"amps/freqs_hz must be shape ({m},{n}), got {a.shape} and {f.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(f))):
            raise ValueError("amps/freqs_hz contain NaN or Inf")
        if np.any(a < 0.0) or np.any(a > 1.0):
            raise ValueError("amps entries must lie in [0, 1]")
        if np.any(f <= 0.0) or np.any(f >= TRIGGER_FREQ_LIMIT_HZ):
            raise ValueError(
                f"freqs_hz entries must lie strictly inside (0, {TRIGGER_FREQ_LIMIT_HZ})")
        a.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "segments_m", m)
        object.__setattr__(self, "freqs_n", n)
        object.__setattr__(self, "amps", a)
        object.__setattr__(self, "freqs_hz", f)

    @property
    def dimensionality(self) -> int:
        return self.segments_m * self.freqs_n

    @property
    def duration_s(self) -> float:
        return self.segments_m * self.segment_len_s

    def with_amps(self, amps: np.ndarray) -> "TriggerParams":
        return TriggerParams(self.segments_m, self.freqs_n, self.segment_len_s,
                             amps, self.freqs_hz)


@dataclass(frozen=True)
class ChannelConfig:
    """Ultrasound path model: carrier, mic nonlinearity, attenuation law.

    `atten_coeff_a0` has units s^n/m with the carrier interpreted in rad/s;
    the default gives about -4.3 dB/m at a 25 kHz carrier.
    """

    carrier_hz: float = 25000.0
    hi_rate_hz: int = 96000
    atten_coeff_a0: float = 2.0e-11
    atten_exp: float = 2.0
    carrier_level: float = 1.0
    nonlin_gain: float = 1.0
    lpf_cutoff_hz: float = 8000.0
    # recording-chain self-noise added by capture_baseband (RMS, relative
    # full scale). Zero keeps the capture a pure function of the formula;
    # nonzero mimics a real microphone's floor, which keeps log-domain
    # features from amplifying epsilon-level band differences.
    capture_dither: float = 0.0

    def __post_init__(self):
        if self.hi_rate_hz <= 2 * (self.carrier_hz + TRIGGER_FREQ_LIMIT_HZ):
            raise ValueError(
                f"hi_rate_hz={self.hi_rate_hz} violates Nyquist for the upper "
                f"sideband of a {self.carrier_hz} Hz carrier")
        if not (1.0 <= self.atten_exp <= 2.0):
            raise ValueError(f"atten_exp must lie in [1, 2], got {self.atten_exp}")
        if self.carrier_level < 0:
            raise ValueError("carrier_level must be >= 0")
        if self.nonlin_gain <= 0:
            raise ValueError("nonlin_gain must be > 0")


@dataclass(frozen=True)
class ResponseTable:
    """Piecewise-linear magnitude response: (frequency_hz, linear_gain)."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(f), float(g)) for f, g in self.points)
        if len(pts) < 2:
            raise ValueError("response table needs at least two points")
        freqs = [f for f, _ in pts]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("response table frequencies must be strictly increasing")
        if any(g < 0 for _, g in pts):
            raise ValueError("response table gains must be >= 0")
        object.__setattr__(self, "points", pts)

    @classmethod
    def flat(cls, gain: float, f_max: float = TRIGGER_FREQ_LIMIT_HZ) -> "ResponseTable":
        return cls(((0.0, gain), (f_max, gain)))

    def covers(self, f_lo: float, f_hi: float) -> bool:
        return self.points[0][0] <= f_lo and self.points[-1][0] >= f_hi

    def gain_at(self, freqs_hz: np.ndarray) -> np.ndarray:
        fs = np.array([f for f, _ in self.points])
        gs = np.array([g for _, g in self.points])
        return np.interp(freqs_hz, fs, gs)


class MixResult(NamedTuple):
    clip: AudioClip
    power_ratio: float
    rescale: float


def synthesize_trigger(params: TriggerParams, rate: int) -> AudioClip:
    """Render the sine-bank trigger at `rate`.

    Each segment starts at phase 0 and carries a 5 ms raised-cosine
    fade-out at its end, so the phase reset at segment boundaries does not
    produce click transients.
    """
    f_max = float(np.max(params.freqs_hz))
    if rate < 2.0 * f_max:
        raise ValueError(
            f"rate {rate} Hz is below Nyquist for trigger frequency {f_max:.1f} Hz")
    seg_samples = int(round(params.segment_len_s * rate))
    ramp = min(int(round(SEGMENT_RAMP_S * rate)), seg_samples)
    y = render_sine_bank(params.amps, params.freqs_hz, seg_samples, float(rate), ramp)
    return AudioClip(y, rate)


def ssb_modulate(baseband: AudioClip, chan: ChannelConfig) -> AudioClip:
    """Upper-sideband modulation with transmitted carrier.

    out = carrier_level*cos(w_c t) + m(t)*cos(w_c t) - m^(t)*sin(w_c t)
    where m^ is the quadrature of the analytic signal of the (resampled)
    baseband. Keeping the carrier lets square-law demodulation recover m.
    """
    if chan.carrier_hz + baseband.rate / 2.0 > chan.hi_rate_hz / 2.0:
        raise ValueError(
            f"carrier {chan.carrier_hz} Hz plus baseband bandwidth "
            f"{baseband.rate / 2.0} Hz exceeds Nyquist of {chan.hi_rate_hz} Hz")
    m_clip = resample(baseband, chan.hi_rate_hz)
    m = m_clip.samples
    # zero-pad to an FFT-friendly length; clip lengths are arbitrary and a
    # large prime factor makes the analytic-signal FFT pathologically slow
    m_quad = np.imag(hilbert(m, N=next_fast_len(len(m)))[:len(m)])
    t = np.arange(len(m)) / chan.hi_rate_hz
    w = 2.0 * np.pi * chan.carrier_hz * t
    y = (chan.carrier_level + m) * np.cos(w) - m_quad * np.sin(w)
    return AudioClip(y, chan.hi_rate_hz)


def nonlinear_demodulate(ultra: AudioClip, chan: ChannelConfig, out_rate: int) -> AudioClip:
    """Square-law microphone capture: s + k2*s^2, low-passed, resampled,
    DC removed. Only the quadratic term moves ultrasound content back into
    the audible band.

    The lowpass is spectral (flat to the cutoff, raised-cosine rolloff
    over the next 2 kHz) applied after DC removal and a 5 ms edge taper;
    that combination keeps the finite simulation window from splattering
    carrier energy into the audible band the way an IIR's edge transients
    would.
    """
    if out_rate > ultra.rate:
        raise ValueError(f"out_rate {out_rate} exceeds input rate {ultra.rate}")
    s = ultra.samples
    z = s + chan.nonlin_gain * (s * s)
    z = z - np.mean(z)
    n_taper = int(round(0.005 * ultra.rate))
    if n_taper > 0 and len(z) > 2 * n_taper:
        w = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_taper) / n_taper))
        z[:n_taper] *= w
        z[-n_taper:] *= w[::-1]
    nfast = next_fast_len(len(z))
    spec = rfft(z, n=nfast)
    freqs = rfftfreq(nfast, 1.0 / ultra.rate)
    cutoff, roll = chan.lpf_cutoff_hz, 2000.0
    gain = np.ones_like(freqs)
    gain[freqs >= cutoff + roll] = 0.0
    band = (freqs > cutoff) & (freqs < cutoff + roll)
    gain[band] = 0.5 * (1.0 + np.cos(np.pi * (freqs[band] - cutoff) / roll))
    z = irfft(spec * gain, n=nfast)[:len(z)]
    y = resample(AudioClip(z, ultra.rate), out_rate).samples
    y = y - np.mean(y)
    return AudioClip(y, out_rate)


def attenuation_factor(d_m: float, chan: ChannelConfig) -> float:
    """Power-law air absorption at the carrier: exp(-a0 * w_c^n * d)."""
    w_c = 2.0 * math.pi * chan.carrier_hz
    return math.exp(-chan.atten_coeff_a0 * (w_c ** chan.atten_exp) * d_m)


def attenuate(p: AudioClip, d_m: float, chan: ChannelConfig) -> AudioClip:
    if d_m < 0:
        raise ValueError(f"distance must be >= 0, got {d_m}")
    return AudioClip(p.samples * attenuation_factor(d_m, chan), p.rate)


def shift_place(p: AudioClip, t_s: float, total_len: int) -> AudioClip:
    """Place `p` into a zero clip of `total_len` samples starting at t_s.

    Content running past the end is truncated; that is the recording
    window closing mid-trigger, not an error.
    """
    if t_s < 0:
        raise ValueError(f"start time must be >= 0, got {t_s}")
    if total_len < 0:
        raise ValueError(f"total_len must be >= 0, got {total_len}")
    out = np.zeros(int(total_len))
    start = int(round(t_s * p.rate))
    if start < total_len:
        n = min(len(p), total_len - start)
        out[start:start + n] = p.samples[:n]
    return AudioClip(out, p.rate)


def mix(x: AudioClip, p: AudioClip, beta: float) -> MixResult:
    """Capture model: beta*x + p, with the speech-to-trigger power ratio.

    If the sum clips, both terms are rescaled by the shared peak factor
    (reported in `rescale`), which preserves the power ratio exactly.
    """
    if len(x) != len(p):
        raise ValueError(f"length mismatch: {len(x)} vs {len(p)}")
    if x.rate != p.rate:
        raise ValueError(f"rate mismatch: {x.rate} vs {p.rate}")
    e_x = mean_power(x.samples * beta)
    e_p = mean_power(p)
    ratio = math.inf if e_p == 0.0 else e_x / e_p
    y = beta * x.samples + p.samples
    pk = peak(y)
    rescale = 1.0 if pk <= 1.0 else 1.0 / pk
    if rescale != 1.0:
        y = y * rescale
    return MixResult(AudioClip(y, x.rate), ratio, rescale)


def rir_convolve(x: AudioClip, rir: AudioClip) -> AudioClip:
    """Linear convolution with a room impulse response, truncated to the
    input length; peak-normalized only when the result clips."""
    if x.rate != rir.rate:
        raise ValueError(f"rate mismatch: {x.rate} vs {rir.rate}")
    y = fftconvolve(x.samples, rir.samples)[:len(x)]
    pk = peak(y)
    if pk > 1.0:
        y = y / pk
    return AudioClip(y, x.rate)


def synthetic_rir(rate: int, rt60_s: float, seed: int) -> AudioClip:
    """Exponentially decaying white-noise burst, unit energy.

    RT60 values of roughly 0.15 / 0.4 / 0.8 s stand in for small, medium,
    and large rooms.
    """
    if rt60_s <= 0:
        raise ValueError("rt60 must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(rt60_s * rate))
    t = np.arange(n) / rate
    tau = rt60_s / (3.0 * math.log(10.0))
    h = rng.standard_normal(n) * np.exp(-t / tau)
    h[0] = max(1.0, abs(h[0]))  # direct path dominates
    h = h / math.sqrt(np.sum(h * h))
    return AudioClip(h, rate)


def precompensate(baseband: AudioClip, mic_resp: ResponseTable,
                  path_resp: ResponseTable, num_taps: int = 257) -> AudioClip:
    """Inverse-filter the baseband: magnitude ~ path_gain / max(mic_gain, eps).

    The epsilon floor (5% of the peak mic gain) bounds the inverse where
    the mic response dies. Linear-phase FIR, applied with its group delay
    removed, so compensation never shifts alignment.
    """
    if not mic_resp.covers(0.0, TRIGGER_FREQ_LIMIT_HZ):
        raise ValueError("mic response table does not cover [0, 4000] Hz")
    if not path_resp.covers(0.0, TRIGGER_FREQ_LIMIT_HZ):
        raise ValueError("path response table does not cover [0, 4000] Hz")
    nyq = baseband.rate / 2.0
    grid = np.linspace(0.0, nyq, 513)
    mic = mic_resp.gain_at(grid)
    path = path_resp.gain_at(grid)
    eps = 0.05 * float(np.max(mic))
    if eps <= 0.0:
        raise ValueError("mic response table is all zero")
    gain = path / np.maximum(mic, eps)
    if num_taps % 2 == 0:
        num_taps += 1
    taps = firwin2(num_taps, grid, gain, fs=baseband.rate)
    delay = (num_taps - 1) // 2
    y = np.convolve(baseband.samples, taps, mode="full")
    y = y[delay:delay + len(baseband)]
    return AudioClip(y, baseband.rate)


def simulate_capture(clip: AudioClip, chan: ChannelConfig) -> AudioClip:
    """Full channel round trip at the clip's own rate: SSB up, square-law
    capture back down."""
    ultra = ssb_modulate(clip, chan)
    return nonlinear_demodulate(ultra, chan, clip.rate)


def capture_baseband(clip: AudioClip, chan: ChannelConfig) -> AudioClip:
    """Baseband-exact version of :func:`simulate_capture`.

    For s = (C+m)cos(w_c t) - m^(t)sin(w_c t), everything the capture
    low-pass keeps of s + k2*s^2 is k2*[(C+m)^2 + m^2_quad]/2, so the
    audible result can be computed without ever touching the carrier
    rate. Runs at 2x the clip rate (the squared terms occupy twice the
    baseband) and is what the optimizer's inner loop uses; agreement with
    the full ultrasonic chain is asserted in the tests.
    """
    work_rate = 2 * clip.rate
    m_clip = resample(clip, work_rate)
    m = m_clip.samples
    m_quad = np.imag(hilbert(m, N=next_fast_len(len(m)))[:len(m)])
    c = chan.carrier_level
    z = chan.nonlin_gain * 0.5 * ((c + m) ** 2 + m_quad ** 2)
    z = z - np.mean(z)
    n_taper = int(round(0.005 * work_rate))
    if n_taper > 0 and len(z) > 2 * n_taper:
        w = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_taper) / n_taper))
        z[:n_taper] *= w
        z[-n_taper:] *= w[::-1]
    nfast = next_fast_len(len(z))
    spec = rfft(z, n=nfast)
    freqs = rfftfreq(nfast, 1.0 / work_rate)
    cutoff, roll = chan.lpf_cutoff_hz, 2000.0
    gain = np.ones_like(freqs)
    gain[freqs >= cutoff + roll] = 0.0
    band = (freqs > cutoff) & (freqs < cutoff + roll)
    gain[band] = 0.5 * (1.0 + np.cos(np.pi * (freqs[band] - cutoff) / roll))
    z = irfft(spec * gain, n=nfast)[:len(z)]
    y = resample(AudioClip(z, work_rate), clip.rate).samples
    y = y - np.mean(y)
    if chan.capture_dither > 0.0:
        # deterministic per-content noise floor: seeded from the samples,
        # so the capture stays a pure function of its inputs
        digest = hashlib.blake2s(y.tobytes(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        y = y + chan.capture_dither * rng.standard_normal(len(y))
    return AudioClip(y, clip.rate)
