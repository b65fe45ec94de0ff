"""Black-box trigger optimization.

The loss is evaluated under randomized augmentation (utterance, placement,
relative loudness, distance, reverberation), its gradient with respect to
the amplitude matrix is estimated with antithetic NES queries against the
scorer, and Adam ascends the fitness with a [0, 1] clip after every step.
Frequencies are frozen after initialization; amplitude L1 weight > 0
drives unused sines toward zero so the trigger ends up spectrally sparse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .audio import AudioClip
from .dsp import (ChannelConfig, TriggerParams, attenuate, capture_baseband,
                  mix, rir_convolve, shift_place, synthesize_trigger)
from .oracle import ScorerHandle, Voiceprint, cosine_score, embed, enroll

DEFAULT_FREQ_RANGE = (50.0, 4000.0)


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0  # victim-similarity weight
    alpha2: float = 1.0  # trigger-similarity weight
    alpha3: float = 0.05  # amplitude L1 weight

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0 or self.alpha3 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.alpha1 + self.alpha2 <= 0:
            raise ValueError("at least one similarity weight must be positive")


@dataclass(frozen=True)
class AugmentSpace:
    """Randomization ranges for one loss evaluation.

    `shift_range_s` of None means "anywhere the trigger fits inside the
    drawn utterance". An empty `rir_bank` skips reverberation entirely.
    """

    shift_range_s: tuple[float, float] | None = None
    beta_range: tuple[float, float] = (0.5, 2.0)
    dist_range_m: tuple[float, float] = (0.3, 2.0)
    rir_bank: tuple[AudioClip, ...] = ()
    rir_prob: float = 0.5

    def __post_init__(self):
        for name in ("shift_range_s", "beta_range", "dist_range_m"):
            rng = getattr(self, name)
            if rng is not None and rng[0] > rng[1]:
                raise ValueError(f"{name} is degenerate: {rng}")
        if not (0.0 <= self.rir_prob <= 1.0):
            raise ValueError("rir_prob must lie in [0, 1]")
        object.__setattr__(self, "rir_bank", tuple(self.rir_bank))


@dataclass(frozen=True)
class OptimConfig:
    nes_samples: int = 15
    nes_sigma: float = 0.08
    lr_eta: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epoch: int = 50
    obj_score: float = 1.4
    draws_per_epoch: int = 8
    seed: int = 0
    channel_late_frac: float = 0.3
    freeze_draws: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.nes_samples < 1:
            raise ValueError("nes_samples must be >= 1")
        if self.nes_sigma <= 0:
            raise ValueError("nes_sigma must be > 0")
        if self.lr_eta <= 0:
            raise ValueError("lr_eta must be > 0")


class AugmentDraw(NamedTuple):
    victim_idx: int
    t_s: float
    beta: float
    d_m: float
    rir_idx: int | None


class LossTerms(NamedTuple):
    loss: float
    s_victim: float
    s_tuner: float
    l1: float


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


@dataclass(frozen=True)
class TraceRecord:
    epoch: int
    j: float
    s_victim: float
    s_tuner: float
    l1: float
    query_count: int

    def to_json_dict(self) -> dict:
        return {"epoch": self.epoch, "J": self.j, "S_victim": self.s_victim,
                "S_tuner": self.s_tuner, "L1": self.l1,
                "query_count": self.query_count}


class DrawEvalError(RuntimeError):
    """Wraps a failure inside one augmented loss evaluation; the original
    error is chained, the offending draw recorded."""

    def __init__(self, draw: AugmentDraw, cause: Exception):
        super().__init__(f"loss evaluation failed for draw {draw}: {cause}")
        self.draw = draw


class OptimizeAborted(RuntimeError):
    """Scorer failed mid-run; carries the partial trace and last params."""

    def __init__(self, params: TriggerParams, trace: list[TraceRecord],
                 cause: Exception):
        super().__init__(f"optimization aborted: {cause}")
        self.params = params
        self.trace = trace


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), *key]))


def init_trigger(victim_samples: Sequence[AudioClip], m: int, n: int,
                 seg_len_s: float, rng_seed: int,
                 freq_range: tuple[float, float] = DEFAULT_FREQ_RANGE) -> TriggerParams:
    """Equal-amplitude init at the mean of the samples' peak levels;
    frequencies i.i.d. uniform. The 50 Hz default floor keeps the bank out
    of the band that both detectors and real demodulation pollute."""
    if not victim_samples:
        raise ValueError("need at least one victim sample")
    level = float(np.mean([np.max(np.abs(x.samples)) if len(x) else 0.0
                           for x in victim_samples]))
    level = min(max(level, 0.0), 1.0)
    rng = _rng(rng_seed, 11)
    freqs = rng.uniform(freq_range[0], freq_range[1], size=(m, n))
    freqs = np.minimum(freqs, np.nextafter(freq_range[1], 0.0))
    amps = np.full((m, n), level)
    return TriggerParams(m, n, seg_len_s, amps, freqs)


def render_capture(params: TriggerParams, chan: ChannelConfig, rate: int,
                   *, base: AudioClip | None = None, t_s: float = 0.0,
                   beta: float = 1.0, d_m: float = 0.0,
                   rir: AudioClip | None = None,
                   channel_sim: bool = False,
                   trigger_audio: AudioClip | None = None) -> AudioClip:
    """What the recording device stores: trigger attenuated for distance,
    placed at t_s over the (optionally reverberant) base speech, power-
    safe mixed, and optionally passed through the ultrasound capture
    chain. With base=None the trigger is captured alone.

    `trigger_audio` lets the optimizer reuse one render across the draws
    of an objective evaluation; it must be the render of `params`.
    """
    p = trigger_audio if trigger_audio is not None else synthesize_trigger(params, rate)
    p = attenuate(p, d_m, chan)
    if base is None:
        total = max(len(p), int(round((t_s + params.duration_s) * rate)))
        base = AudioClip.silence(total, rate)
    elif rir is not None:
        base = rir_convolve(base, rir)
    placed = shift_place(p, t_s, len(base))
    captured = mix(base, placed, beta).clip
    if channel_sim:
        captured = capture_baseband(captured, chan)
        pk = float(np.max(np.abs(captured.samples))) if len(captured) else 0.0
        if pk > 1.0:  # what the recorder stores is full-scale bounded
            captured = AudioClip(captured.samples / pk, captured.rate)
    return captured


def loss_terms(params: TriggerParams, draw: AugmentDraw,
               victim_clips: Sequence[AudioClip],
               rir_bank: Sequence[AudioClip],
               scorer: ScorerHandle,
               refs: tuple[Voiceprint, Voiceprint],
               weights: LossWeights, chan: ChannelConfig,
               *, channel_sim: bool = False,
               defense=None,
               trigger_audio: AudioClip | None = None) -> LossTerms:
    """One augmented evaluation of the attack loss (one scorer query)."""
    x_victim, x_tuner = refs
    try:
        rir = rir_bank[draw.rir_idx] if draw.rir_idx is not None else None
        captured = render_capture(
            params, chan, scorer.rate, base=victim_clips[draw.victim_idx],
            t_s=draw.t_s, beta=draw.beta, d_m=draw.d_m, rir=rir,
            channel_sim=channel_sim, trigger_audio=trigger_audio)
        if defense is not None:
            captured = defense(captured)
        vp = embed(captured, scorer)
    except (ValueError, ArithmeticError) as e:
        raise DrawEvalError(draw, e) from e
    s_v = cosine_score(vp, x_victim)
    s_t = cosine_score(vp, x_tuner)
    l1 = float(np.sum(np.abs(params.amps)))
    loss = -weights.alpha1 * s_v - weights.alpha2 * s_t + weights.alpha3 * l1
    return LossTerms(loss, s_v, s_t, l1)


def loss_eval(params, draw, victim_clips, rir_bank, scorer, refs, weights,
              chan, *, channel_sim=False, defense=None,
              trigger_audio=None) -> float:
    return loss_terms(params, draw, victim_clips, rir_bank, scorer, refs,
                      weights, chan, channel_sim=channel_sim,
                      defense=defense, trigger_audio=trigger_audio).loss


def nes_gradient(obj: Callable[[np.ndarray], float], amps: np.ndarray,
                 cfg: OptimConfig, rng: np.random.Generator,
                 workers: int = 1) -> np.ndarray:
    """Antithetic NES estimate of grad obj at `amps`.

    Exactly 2*nes_samples objective evaluations; the returned matrix is
    (1 / (2 n sigma)) * sum_i [obj(A + s*d_i) - obj(A - s*d_i)] * d_i.

    All perturbations are drawn before any evaluation and the sum is
    combined in index order, so running the evaluations on a thread pool
    (workers > 1; obj must be pure) changes nothing but wall time.
    """
    amps = np.asarray(amps, dtype=np.float64)
    sigma = cfg.nes_sigma
    deltas = [rng.standard_normal(amps.shape) for _ in range(cfg.nes_samples)]
    points = []
    for d in deltas:
        points.append(amps + sigma * d)
        points.append(amps - sigma * d)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(obj, points))
    else:
        values = [obj(p) for p in points]
    g = np.zeros_like(amps)
    for i, d in enumerate(deltas):
        g += (values[2 * i] - values[2 * i + 1]) * d
    return g / (2.0 * cfg.nes_samples * sigma)


def adam_step(amps: np.ndarray, grad: np.ndarray, state: AdamState | None,
              cfg: OptimConfig) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam ascent step, then elementwise clip to [0, 1]."""
    amps = np.asarray(amps, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if amps.shape != grad.shape:
        raise ValueError(f"shape mismatch: amps {amps.shape} vs grad {grad.shape}")
    if state is None:
        state = AdamState.zeros(amps.shape)
    t = state.t + 1
    m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad
    v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * (grad * grad)
    m_hat = m / (1.0 - cfg.adam_beta1 ** t)
    v_hat = v / (1.0 - cfg.adam_beta2 ** t)
    new = amps + cfg.lr_eta * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return np.clip(new, 0.0, 1.0), AdamState(m, v, t)


def sample_draws(aug: AugmentSpace, victim_clips: Sequence[AudioClip],
                 trigger_dur_s: float, count: int,
                 rng: np.random.Generator) -> list[AugmentDraw]:
    draws = []
    for _ in range(count):
        vi = int(rng.integers(0, len(victim_clips)))
        if aug.shift_range_s is not None:
            lo, hi = aug.shift_range_s
        else:
            lo, hi = 0.0, max(0.0, victim_clips[vi].duration_s - trigger_dur_s)
        t_s = float(rng.uniform(lo, hi)) if hi > lo else lo
        beta = float(rng.uniform(*aug.beta_range))
        d_m = float(rng.uniform(*aug.dist_range_m))
        rir_idx = None
        if aug.rir_bank and rng.uniform() < aug.rir_prob:
            rir_idx = int(rng.integers(0, len(aug.rir_bank)))
        draws.append(AugmentDraw(vi, t_s, beta, d_m, rir_idx))
    return draws


@dataclass(frozen=True)
class OptimizeResult:
    params: TriggerParams
    trace: tuple[TraceRecord, ...]
    x_victim: Voiceprint
    x_tuner: Voiceprint


def _tuner_ref(params: TriggerParams, chan: ChannelConfig, scorer: ScorerHandle,
               channel_sim: bool) -> Voiceprint:
    alone = render_capture(params, chan, scorer.rate, channel_sim=channel_sim)
    return embed(alone, scorer)


def optimize(victim_samples: Sequence[AudioClip], aug: AugmentSpace,
             weights: LossWeights, cfg: OptimConfig, chan: ChannelConfig,
             scorer: ScorerHandle, *, trigger_m: int = 8, trigger_n: int = 16,
             segment_len_s: float = 0.5, channel_sim: bool = True,
             defense=None) -> OptimizeResult:
    """Run the full trigger generation loop.

    Per epoch: one shared set of `draws_per_epoch` augmentation draws is
    used by all 2n NES evaluations (common random numbers keep the
    antithetic differences free of draw noise and make any evaluation
    schedule give identical results), one Adam step is applied, the
    trigger's own reference voiceprint is refreshed, and fitness
    J = mean(-loss) over the epoch's draws is recorded. Stops early once
    J >= obj_score, and returns the highest-fitness iterate seen (the
    last epoch of a noisy run is not necessarily its best).
    """
    params = init_trigger(victim_samples, trigger_m, trigger_n, segment_len_s,
                          cfg.seed)
    trace: list[TraceRecord] = []
    best: tuple[float, TriggerParams, Voiceprint] | None = None
    try:
        x_victim = enroll(list(victim_samples), scorer)
        first_channel = channel_sim and _channel_on(0, cfg)
        x_tuner = _tuner_ref(params, chan, scorer, first_channel)
        adam: AdamState | None = None
        rng_nes = _rng(cfg.seed, 23)
        for epoch in range(cfg.max_epoch):
            channel_now = channel_sim and _channel_on(epoch, cfg)
            draw_key = 0 if cfg.freeze_draws else epoch
            rng_draws = _rng(cfg.seed, 31, draw_key)
            draws = sample_draws(aug, victim_samples, params.duration_s,
                                 cfg.draws_per_epoch, rng_draws)

            refs = (x_victim, x_tuner)

            def objective(amps: np.ndarray) -> float:
                par = params.with_amps(np.clip(amps, 0.0, 1.0))
                rendered = synthesize_trigger(par, scorer.rate)
                total = 0.0
                for d in draws:
                    total -= loss_eval(par, d, victim_samples, aug.rir_bank,
                                       scorer, refs, weights, chan,
                                       channel_sim=channel_now, defense=defense,
                                       trigger_audio=rendered)
                return total / len(draws)

            grad = nes_gradient(objective, params.amps, cfg, rng_nes,
                                workers=cfg.workers)
            new_amps, adam = adam_step(params.amps, grad, adam, cfg)
            params = params.with_amps(new_amps)
            x_tuner = _tuner_ref(params, chan, scorer, channel_now)

            rendered_now = synthesize_trigger(params, scorer.rate)
            terms = [loss_terms(params, d, victim_samples, aug.rir_bank, scorer,
                                (x_victim, x_tuner), weights, chan,
                                channel_sim=channel_now, defense=defense,
                                trigger_audio=rendered_now)
                     for d in draws]
            j = float(np.mean([-t.loss for t in terms]))
            trace.append(TraceRecord(
                epoch=epoch, j=j,
                s_victim=float(np.mean([t.s_victim for t in terms])),
                s_tuner=float(np.mean([t.s_tuner for t in terms])),
                l1=terms[0].l1, query_count=scorer.query_count))
            if best is None or j >= best[0]:
                best = (j, params, x_tuner)
            if j >= cfg.obj_score:
                break
    except (OSError, RuntimeError) as e:
        if isinstance(e, (DrawEvalError, OptimizeAborted)):
            raise
        raise OptimizeAborted(params, trace, e) from e
    if best is not None:
        _, params, x_tuner = best
    return OptimizeResult(params, tuple(trace), x_victim, x_tuner)


def _channel_on(epoch: int, cfg: OptimConfig) -> bool:
    if cfg.channel_late_frac >= 1.0:
        return True
    if cfg.channel_late_frac <= 0.0:
        return False
    start = int(math.ceil(cfg.max_epoch * (1.0 - cfg.channel_late_frac)))
    return epoch >= start


def prune_sparsify(params: TriggerParams, floor: float = 1e-3) -> TriggerParams:
    """Zero every amplitude at or below floor * max(amps)."""
    a = params.amps.copy()
    thresh = floor * float(np.max(a))
    if thresh > 0.0:
        a[a <= thresh] = 0.0
    return params.with_amps(a)


def count_active(params: TriggerParams) -> int:
    """Number of sine components with nonzero amplitude."""
    return int(np.count_nonzero(params.amps))
