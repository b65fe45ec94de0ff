"""Experiment manifests: one JSON file that pins every knob of a run.

Paths inside a manifest are resolved relative to the manifest file, and
must exist at load time. The canonical hash of the manifest (embedded in
every artifact, together with the seed) is what makes runs auditable and
re-runnable.
"""

from __future__ import annotations

import hashlib
import json
import shlex
from dataclasses import dataclass
from pathlib import Path

from .dsp import ChannelConfig
from .forge import AugmentSpace, LossWeights, OptimConfig


@dataclass(frozen=True)
class TriggerGeometry:
    segments_m: int = 8
    freqs_n: int = 16
    segment_len_s: float = 0.5


@dataclass
class ExperimentManifest:
    seed: int
    victim: str
    victim_samples: list[Path]
    heldout_samples: list[Path]
    cohort: dict[str, dict[str, list[Path]]]
    trigger: TriggerGeometry
    augment_raw: dict
    loss: LossWeights
    optim: OptimConfig
    channel: ChannelConfig
    channel_sim: bool
    scorer: str
    defenses: list[str]
    adaptive_defense: str | None
    num_trigger_probes: int
    probe_len_s: float
    enroll_beta: float
    enroll_dist_m: float
    repeats: int
    base_dir: Path
    raw: dict

    @property
    def hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def scorer_argv(self) -> list[str] | None:
        """None means the builtin scorer; otherwise the argv to spawn."""
        if self.scorer == "builtin":
            return None
        if self.scorer.startswith("cmd:"):
            return shlex.split(self.scorer[4:])
        raise ValueError(f"unknown scorer descriptor {self.scorer!r}")


def _as_range(v) -> tuple[float, float] | None:
    if v is None:
        return None
    return (float(v[0]), float(v[1]))


def _resolve_paths(entries, base: Path, what: str) -> list[Path]:
    out = []
    for e in entries:
        p = (base / e).resolve() if not Path(e).is_absolute() else Path(e)
        if not p.exists():
            raise FileNotFoundError(f"{what}: referenced path does not exist: {p}")
        out.append(p)
    return out


def load_manifest(path) -> ExperimentManifest:
    path = Path(path)
    raw = json.loads(path.read_text())
    base = path.parent
    victim_samples = _resolve_paths(raw["victim_samples"], base, "victim_samples")
    if not victim_samples:
        raise ValueError("manifest needs at least one victim sample (G >= 1)")
    heldout = _resolve_paths(raw.get("heldout_samples", []), base, "heldout_samples")
    cohort = {}
    for sid, sets in raw.get("cohort", {}).items():
        cohort[sid] = {
            "enroll": _resolve_paths(sets.get("enroll", []), base, f"cohort {sid}"),
            "probes": _resolve_paths(sets.get("probes", []), base, f"cohort {sid}"),
        }
    trig = raw.get("trigger", {})
    geometry = TriggerGeometry(
        segments_m=int(trig.get("segments_m", 8)),
        freqs_n=int(trig.get("freqs_n", 16)),
        segment_len_s=float(trig.get("segment_len_s", 0.5)),
    )
    loss = LossWeights(**raw.get("loss", {}))
    optim_kwargs = dict(raw.get("optim", {}))
    optim_kwargs.setdefault("seed", int(raw.get("seed", 0)))
    optim = OptimConfig(**optim_kwargs)
    channel = ChannelConfig(**raw.get("channel", {}))
    aug_raw = dict(raw.get("augment", {}))
    if "rir_bank" in aug_raw and aug_raw["rir_bank"]:
        aug_raw["rir_bank"] = [str(p) for p in
                               _resolve_paths(aug_raw["rir_bank"], base, "rir_bank")]
    return ExperimentManifest(
        seed=int(raw.get("seed", 0)),
        victim=str(raw["victim"]),
        victim_samples=victim_samples,
        heldout_samples=heldout,
        cohort=cohort,
        trigger=geometry,
        augment_raw=aug_raw,
        loss=loss,
        optim=optim,
        channel=channel,
        channel_sim=bool(raw.get("channel_sim", True)),
        scorer=str(raw.get("scorer", "builtin")),
        defenses=list(raw.get("defenses", [])),
        adaptive_defense=raw.get("adaptive_defense"),
        num_trigger_probes=int(raw.get("num_trigger_probes", 20)),
        probe_len_s=float(raw.get("probe_len_s", 5.0)),
        enroll_beta=float(raw.get("enroll_beta", 1.0)),
        enroll_dist_m=float(raw.get("enroll_dist_m", 0.5)),
        repeats=int(raw.get("repeats", 1)),
        base_dir=base,
        raw=raw,
    )


def build_augment_space(man: ExperimentManifest, rate: int) -> AugmentSpace:
    """Materialize the augmentation ranges; RIR clips are loaded from the
    bank paths, or synthesized for the three standard room sizes when the
    manifest asks for ``synthetic_rirs``."""
    from .dsp import synthetic_rir
    from .wavio import read_wav

    aug = man.augment_raw
    bank: list = []
    for p in aug.get("rir_bank", []) or []:
        clip = read_wav(p)
        if clip.rate != rate:
            from .audio import resample
            clip = resample(clip, rate)
        bank.append(clip)
    if aug.get("synthetic_rirs", False):
        for i, rt60 in enumerate((0.15, 0.4, 0.8)):
            bank.append(synthetic_rir(rate, rt60, seed=man.seed * 7 + i))
    return AugmentSpace(
        shift_range_s=_as_range(aug.get("shift_range_s")),
        beta_range=_as_range(aug.get("beta_range")) or (0.5, 2.0),
        dist_range_m=_as_range(aug.get("dist_range_m")) or (0.3, 2.0),
        rir_bank=tuple(bank),
        rir_prob=float(aug.get("rir_prob", 0.5)),
    )
