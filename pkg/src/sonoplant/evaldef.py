"""Recognition-stage evaluation: EER threshold calibration, SV/CSI/OSI
decisions, attack-success and user-accuracy rates, the defense transform
suite, and ultrasound-injection detection features."""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.fft import next_fast_len, rfft, rfftfreq
from scipy.ndimage import median_filter
from scipy.signal import butter, fftconvolve, hilbert, sosfiltfilt
from scipy.stats import skew

from .audio import AudioClip, resample
from .oracle import ScorerHandle, Voiceprint, cosine_score, embed

TASKS = ("SV", "CSI", "OSI")


def calibrate_threshold(genuine_scores: Sequence[float],
                        impostor_scores: Sequence[float]) -> tuple[float, float]:
    """Equal-error-rate operating point.

    Candidate thresholds are midpoints between adjacent pooled scores
    (plus sentinels beyond the extremes); the crossing of false-accept and
    false-reject rates is located by linear interpolation between the two
    adjacent candidates.
    """
    g = np.asarray(genuine_scores, dtype=np.float64)
    i = np.asarray(impostor_scores, dtype=np.float64)
    if g.size == 0 or i.size == 0:
        raise ValueError("calibration needs non-empty genuine and impostor scores")
    pooled = np.unique(np.concatenate([g, i]))
    mids = (pooled[:-1] + pooled[1:]) / 2.0 if pooled.size > 1 else np.array([])
    cands = np.concatenate([[pooled[0] - 1.0], mids, [pooled[-1] + 1.0]])
    far = np.array([np.mean(i >= th) for th in cands])
    frr = np.array([np.mean(g < th) for th in cands])
    d = far - frr  # non-increasing in threshold
    k = int(np.argmax(d <= 0.0))
    if k == 0:
        return float(cands[0]), float((far[0] + frr[0]) / 2.0)
    span = d[k - 1] - d[k]
    t = 0.5 if span == 0.0 else d[k - 1] / span
    theta = float(cands[k - 1] + t * (cands[k] - cands[k - 1]))
    far_x = far[k - 1] + t * (far[k] - far[k - 1])
    frr_x = frr[k - 1] + t * (frr[k] - frr[k - 1])
    return theta, float((far_x + frr_x) / 2.0)


@dataclass
class EvalConfig:
    """Inputs for one evaluation run: who is enrolled, which probes are
    genuine, which are adversarial, and the operating threshold."""

    task: str
    enrolled: dict[str, Voiceprint]
    victim_id: str
    genuine_probes: Sequence[AudioClip]
    trigger_probes: Sequence[AudioClip]
    theta: float | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task in ("SV", "OSI") and self.theta is None:
            raise ValueError(f"{self.task} requires a threshold")
        if self.task == "CSI" and len(self.enrolled) < 2:
            raise ValueError("CSI requires at least 2 enrolled speakers")
        if self.victim_id not in self.enrolled:
            raise ValueError(f"victim {self.victim_id!r} is not enrolled")


class Decision(NamedTuple):
    accepted: bool
    identity: str | None
    score: float


def decide(task: str, probe: Voiceprint, cfg: EvalConfig,
           claimed: str | None = None) -> Decision:
    """Apply the task's decision rule to one probe voiceprint."""
    if task == "SV":
        claimed = claimed if claimed is not None else cfg.victim_id
        if claimed not in cfg.enrolled:
            raise ValueError(f"unknown claimed speaker {claimed!r}")
        score = cosine_score(probe, cfg.enrolled[claimed])
        return Decision(score >= cfg.theta, claimed if score >= cfg.theta else None,
                        score)
    # identification: argmax over enrolled, ties to the lowest speaker id
    best_id, best_score = None, -np.inf
    for sid in sorted(cfg.enrolled):
        s = cosine_score(probe, cfg.enrolled[sid])
        if s > best_score:
            best_id, best_score = sid, s
    if task == "CSI":
        return Decision(True, best_id, best_score)
    if task == "OSI":
        ok = best_score >= cfg.theta
        return Decision(ok, best_id if ok else None, best_score)
    raise ValueError(f"unknown task {task!r}")


class EvalRow(NamedTuple):
    task: str
    defense: str
    acc: float
    asr: float


def _probe_ok(task: str, decision: Decision, victim: str) -> bool:
    if task == "SV":
        return decision.accepted
    if task == "CSI":
        return decision.identity == victim
    return decision.accepted and decision.identity == victim


def evaluate(cfg: EvalConfig, scorer: ScorerHandle,
             defense: "DefenseSpec | None" = None) -> EvalRow:
    """ACC over the victim's genuine probes, ASR over trigger probes.

    Defenses transform probe audio only; enrolled voiceprints are the
    stored ones and are never re-processed.
    """
    if not cfg.genuine_probes or not cfg.trigger_probes:
        raise ValueError("evaluation needs non-empty probe sets")

    def outcome(clip: AudioClip) -> bool:
        if defense is not None:
            clip = apply_defense(clip, defense)
        vp = embed(clip, scorer)
        return _probe_ok(cfg.task, decide(cfg.task, vp, cfg, claimed=cfg.victim_id),
                         cfg.victim_id)

    acc = 100.0 * np.mean([outcome(c) for c in cfg.genuine_probes])
    asr = 100.0 * np.mean([outcome(c) for c in cfg.trigger_probes])
    return EvalRow(cfg.task, str(defense) if defense else "none",
                   float(acc), float(asr))


# ---------------------------------------------------------------------------
# Defense transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DefenseSpec:
    kind: str
    threshold_db: float = -25.0
    bits: int = 8
    low_hz: float = 50.0
    high_hz: float = 4000.0
    kernel: int = 5
    squeeze_rate: float = 0.5
    command: str = ""

    def __post_init__(self):
        if self.kind not in ("vad", "quantize", "bandpass", "median", "squeeze",
                             "external_cmd"):
            raise ValueError(f"unknown defense kind {self.kind!r}")
        if self.kind == "median" and (self.kernel < 3 or self.kernel % 2 == 0):
            raise ValueError("median kernel must be odd and >= 3")
        if self.kind == "squeeze" and not (0.0 < self.squeeze_rate < 1.0):
            raise ValueError("squeeze rate must lie in (0, 1)")
        if self.kind == "quantize" and self.bits not in (8, 16):
            raise ValueError("quantize bits must be 8 or 16")
        if self.kind == "bandpass" and not (0 <= self.low_hz < self.high_hz):
            raise ValueError("bandpass needs 0 <= low < high")
        if self.kind == "external_cmd" and not self.command:
            raise ValueError("external_cmd needs a command template")

    def __str__(self) -> str:
        if self.kind == "vad":
            return f"vad:{self.threshold_db:g}"
        if self.kind == "quantize":
            return f"quantize:{self.bits}"
        if self.kind == "bandpass":
            return f"bandpass:{self.low_hz:g},{self.high_hz:g}"
        if self.kind == "median":
            return f"median:{self.kernel}"
        if self.kind == "squeeze":
            return f"squeeze:{self.squeeze_rate:g}"
        return f"cmd:{self.command}"

    def __call__(self, x: AudioClip) -> AudioClip:
        return apply_defense(x, self)


def parse_defense(text: str) -> DefenseSpec:
    """Parse CLI/manifest defense strings like ``median:5`` or
    ``bandpass:50,4000`` or ``cmd:lame {in} {out}``."""
    kind, _, arg = text.partition(":")
    kind = kind.strip()
    if kind == "vad":
        return DefenseSpec("vad", threshold_db=float(arg or -25))
    if kind == "quantize":
        return DefenseSpec("quantize", bits=int(arg or 8))
    if kind == "bandpass":
        lo, hi = (arg or "50,4000").split(",")
        return DefenseSpec("bandpass", low_hz=float(lo), high_hz=float(hi))
    if kind == "median":
        return DefenseSpec("median", kernel=int(arg or 5))
    if kind == "squeeze":
        return DefenseSpec("squeeze", squeeze_rate=float(arg or 0.5))
    if kind == "cmd":
        return DefenseSpec("external_cmd", command=arg)
    raise ValueError(f"cannot parse defense spec {text!r}")


def _vad(x: AudioClip, threshold_db: float) -> AudioClip:
    frame = max(1, int(round(0.020 * x.rate)))
    n = len(x) // frame
    if n == 0:
        return x
    frames = x.samples[:n * frame].reshape(n, frame)
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    limit = float(np.max(rms)) * (10.0 ** (threshold_db / 20.0))
    keep = frames[rms >= limit]
    tail = x.samples[n * frame:]
    parts = [keep.reshape(-1)] + ([tail] if tail.size else [])
    out = np.concatenate(parts) if keep.size or tail.size else np.zeros(0)
    return AudioClip(out, x.rate)


def _quantize(x: AudioClip, bits: int) -> AudioClip:
    levels = 2 ** bits - 1  # 2^bits levels over [-1, 1]
    y = np.clip(x.samples, -1.0, 1.0)
    y = np.round((y + 1.0) / 2.0 * levels) / levels * 2.0 - 1.0
    return AudioClip(y, x.rate)


def _bandpass(x: AudioClip, low_hz: float, high_hz: float) -> AudioClip:
    nyq = x.rate / 2.0
    if high_hz >= nyq * 0.999:
        sos = butter(4, low_hz, btype="high", fs=x.rate, output="sos")
    elif low_hz <= 0.0:
        sos = butter(4, high_hz, btype="low", fs=x.rate, output="sos")
    else:
        sos = butter(4, [low_hz, high_hz], btype="band", fs=x.rate, output="sos")
    return AudioClip(sosfiltfilt(sos, x.samples), x.rate)


def _median(x: AudioClip, kernel: int) -> AudioClip:
    return AudioClip(median_filter(x.samples, size=kernel, mode="nearest"), x.rate)


def _squeeze(x: AudioClip, rate_frac: float) -> AudioClip:
    mid = max(1, int(round(x.rate * rate_frac)))
    down = resample(x, mid)
    up = resample(down, x.rate)
    y = up.samples
    if len(y) < len(x):
        y = np.pad(y, (0, len(x) - len(y)))
    return AudioClip(y[:len(x)], x.rate)


def _external_cmd(x: AudioClip, template: str) -> AudioClip:
    from .wavio import read_wav, write_wav  # local import to avoid a cycle
    with tempfile.TemporaryDirectory(prefix="sonoplant_defense_") as tmp:
        src = Path(tmp) / "in.wav"
        dst = Path(tmp) / "out.wav"
        write_wav(src, x)
        cmd = [part.replace("{in}", str(src)).replace("{out}", str(dst))
               for part in shlex.split(template)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(
                f"defense command {cmd!r} failed with code {proc.returncode}: "
                f"{proc.stderr.strip()}")
        if not dst.exists():
            raise RuntimeError(f"defense command {cmd!r} produced no output file")
        out = read_wav(dst)
    return resample(out, x.rate) if out.rate != x.rate else out


def apply_defense(x: AudioClip, d: DefenseSpec) -> AudioClip:
    if d.kind == "vad":
        return _vad(x, d.threshold_db)
    if d.kind == "quantize":
        return _quantize(x, d.bits)
    if d.kind == "bandpass":
        return _bandpass(x, d.low_hz, d.high_hz)
    if d.kind == "median":
        return _median(x, d.kernel)
    if d.kind == "squeeze":
        return _squeeze(x, d.squeeze_rate)
    return _external_cmd(x, d.command)


# ---------------------------------------------------------------------------
# Ultrasound-injection detection features
# ---------------------------------------------------------------------------

class InjectionFeatures(NamedTuple):
    sub50_power_ratio: float
    correlation_coeff: float
    amplitude_skew: float


def liprad_features(x: AudioClip) -> InjectionFeatures:
    """Three statistics that separate demodulated-speech injections from
    ordinary audio: energy share below 50 Hz, peak correlation of the
    sub-50 Hz envelope against the full-band envelope, and sample skew.

    The correlation statistic is an envelope-autocorrelation proxy for the
    published detector's coefficient, and is labeled as such in reports.
    """
    if x.duration_s < 1.0:
        raise ValueError("need at least 1 s of audio")
    s = x.samples
    total = float(np.sum(s * s))
    if total == 0.0:
        return InjectionFeatures(0.0, 0.0, 0.0)
    nfast = next_fast_len(len(s))
    spec = rfft(s, n=nfast)
    freqs = rfftfreq(nfast, 1.0 / x.rate)
    power = np.abs(spec) ** 2
    sub50 = float(np.sum(power[freqs < 50.0]) / np.sum(power))

    sos = butter(4, 50.0, btype="low", fs=x.rate, output="sos")
    low_band = sosfiltfilt(sos, s)
    env_low = np.abs(hilbert(low_band, N=nfast)[:len(s)])
    env_full = np.abs(hilbert(s, N=nfast)[:len(s)])
    a = env_low - np.mean(env_low)
    b = env_full - np.mean(env_full)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom < 1e-30:
        corr = 0.0
    else:
        xc = fftconvolve(a, b[::-1], mode="full") / denom
        corr = float(np.max(np.abs(xc)))
    return InjectionFeatures(sub50, corr, float(skew(s)))
