"""Command-line surface: corpus generation, threshold calibration, trigger
synthesis/optimization, poisoned enrollment, and evaluation reports.

Every artifact embeds the manifest hash and master seed, and all
randomness is derived from the seed, so re-running a subcommand with the
same manifest reproduces its outputs byte for byte on the builtin scorer.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .audio import AudioClip
from .corpus import generate_speaker_clips
from .dsp import TriggerParams, ssb_modulate, synthesize_trigger
from .evaldef import (DefenseSpec, EvalConfig, EvalRow, calibrate_threshold,
                      evaluate, parse_defense)
from .forge import (OptimizeResult, count_active, init_trigger, optimize,
                    render_capture, _rng)
from .manifest import ExperimentManifest, build_augment_space, load_manifest
from .oracle import ScorerHandle, Voiceprint, cosine_score, embed, enroll
from .wavio import read_wav, write_wav


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------

def _dump_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")


def params_to_dict(params: TriggerParams) -> dict:
    return {
        "segments_m": params.segments_m,
        "freqs_n": params.freqs_n,
        "segment_len_s": params.segment_len_s,
        "amps": params.amps.tolist(),
        "freqs_hz": params.freqs_hz.tolist(),
    }


def params_from_dict(d: dict) -> TriggerParams:
    return TriggerParams(d["segments_m"], d["freqs_n"], d["segment_len_s"],
                         np.array(d["amps"]), np.array(d["freqs_hz"]))


def save_trigger_params(path: Path, params: TriggerParams,
                        man: ExperimentManifest, extra: dict | None = None) -> None:
    payload = {"manifest_sha256": man.hash, "seed": man.seed,
               "kernel_backend": kernels.BACKEND,
               "active_frequencies": count_active(params)}
    payload.update(params_to_dict(params))
    if extra:
        payload.update(extra)
    _dump_json(path, payload)


def load_trigger_params(path) -> TriggerParams:
    return params_from_dict(json.loads(Path(path).read_text()))


def open_scorer(man: ExperimentManifest) -> ScorerHandle:
    argv = man.scorer_argv()
    if argv is None:
        return ScorerHandle.builtin()
    return ScorerHandle.external(argv)


def _load_clips(paths, rate: int) -> list[AudioClip]:
    clips = []
    for p in paths:
        clip = read_wav(p)
        if clip.rate != rate:
            from .audio import resample
            clip = resample(clip, rate)
        clips.append(clip)
    return clips


# ---------------------------------------------------------------------------
# Pipeline stages (callable from tests as well as the CLI)
# ---------------------------------------------------------------------------

def stage_make_corpus(out_dir: Path, seed: int, n_speakers: int = 6,
                      n_enroll: int = 3, n_probes: int = 20,
                      duration_range=(4.0, 6.0), rate: int = 16000) -> dict:
    """Write the synthetic corpus plus a ready-to-run manifest."""
    out_dir = Path(out_dir)
    speakers = {}
    for idx in range(n_speakers):
        sid = f"spk{idx}"
        spk_dir = out_dir / "corpus" / sid
        spk_dir.mkdir(parents=True, exist_ok=True)
        clips = generate_speaker_clips(seed, idx, n_enroll + n_probes,
                                       duration_range, rate,
                                       n_speakers=n_speakers)
        enroll_paths, probe_paths = [], []
        for i, clip in enumerate(clips):
            kind = "enroll" if i < n_enroll else "probe"
            name = f"{kind}_{i if i < n_enroll else i - n_enroll:02d}.wav"
            write_wav(spk_dir / name, clip)
            rel = str(Path("corpus") / sid / name)
            (enroll_paths if i < n_enroll else probe_paths).append(rel)
        speakers[sid] = {"enroll": enroll_paths, "probes": probe_paths}

    # default attack recipe: verified to clear ACC/ASR >= 90/90 (SV, OSI)
    # and ASR >= 95 (CSI) against the builtin scorer on this corpus
    victim = "spk0"
    manifest = {
        "seed": seed,
        "rate": rate,
        "victim": victim,
        "victim_samples": speakers[victim]["enroll"],
        "heldout_samples": speakers[victim]["probes"],
        "cohort": {sid: sets for sid, sets in speakers.items() if sid != victim},
        "trigger": {"segments_m": 16, "freqs_n": 12, "segment_len_s": 0.25},
        "augment": {"beta_range": [0.5, 2.0], "dist_range_m": [0.3, 2.0],
                    "shift_range_s": None, "rir_bank": [], "rir_prob": 0.5,
                    "synthetic_rirs": True},
        "loss": {"alpha1": 1.5, "alpha2": 0.5, "alpha3": 0.0},
        "optim": {"nes_samples": 15, "nes_sigma": 0.08, "lr_eta": 0.06,
                  "max_epoch": 170, "obj_score": 1.90, "draws_per_epoch": 4,
                  "channel_late_frac": 1.0},
        "channel": {"capture_dither": 0.006},
        "channel_sim": True,
        "scorer": "builtin",
        "defenses": ["vad:-25", "quantize:8", "bandpass:50,7000",
                     "squeeze:0.5", "median:5"],
        "adaptive_defense": None,
        "num_trigger_probes": 20,
        "probe_len_s": 4.0,
        "enroll_beta": 1.0,
        "enroll_dist_m": 0.5,
    }
    _dump_json(out_dir / "manifest.json", manifest)
    return manifest


def stage_calibrate(man: ExperimentManifest, scorer: ScorerHandle,
                    out_dir: Path) -> tuple[float, float]:
    """EER threshold from the clean corpus (victim + cohort)."""
    rate = scorer.rate
    genuine, impostor = [], []
    enrollments: dict[str, Voiceprint] = {}
    probes: dict[str, list] = {}
    sets = {man.victim: {"enroll": man.victim_samples, "probes": man.heldout_samples}}
    sets.update(man.cohort)
    for sid, group in sets.items():
        if not group["enroll"] or not group["probes"]:
            continue
        enrollments[sid] = enroll(_load_clips(group["enroll"], rate), scorer)
        probes[sid] = [embed(c, scorer) for c in _load_clips(group["probes"], rate)]
    if len(enrollments) < 2:
        raise ValueError("calibration needs at least two speakers with probes")
    for sid, vps in probes.items():
        for vp in vps:
            for other, enr in enrollments.items():
                (genuine if other == sid else impostor).append(
                    cosine_score(vp, enr))
    theta, eer = calibrate_threshold(genuine, impostor)
    _dump_json(Path(out_dir) / "calibration.json", {
        "manifest_sha256": man.hash, "seed": man.seed,
        "theta": theta, "eer": eer, "theta_source": "calibrated",
        "num_genuine": len(genuine), "num_impostor": len(impostor),
    })
    return theta, eer


def stage_optimize(man: ExperimentManifest, scorer: ScorerHandle,
                   out_dir: Path, channel_sim: bool | None = None,
                   repeat_idx: int = 0) -> OptimizeResult:
    rate = scorer.rate
    victims = _load_clips(man.victim_samples, rate)
    aug = build_augment_space(man, rate)
    channel_sim = man.channel_sim if channel_sim is None else channel_sim
    defense = parse_defense(man.adaptive_defense) if man.adaptive_defense else None
    cfg = man.optim
    if repeat_idx:
        from dataclasses import replace
        cfg = replace(cfg, seed=cfg.seed + repeat_idx)
    result = optimize(victims, aug, man.loss, cfg, man.channel, scorer,
                      trigger_m=man.trigger.segments_m,
                      trigger_n=man.trigger.freqs_n,
                      segment_len_s=man.trigger.segment_len_s,
                      channel_sim=channel_sim, defense=defense)
    suffix = f"_r{repeat_idx}" if repeat_idx else ""
    out_dir = Path(out_dir)
    save_trigger_params(out_dir / f"trigger_params{suffix}.json", result.params, man,
                        extra={"epochs_run": len(result.trace)})
    trace_path = out_dir / f"trace{suffix}.jsonl"
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    with open(trace_path, "w") as f:
        header = {"manifest_sha256": man.hash, "seed": cfg.seed,
                  "kernel_backend": kernels.BACKEND}
        f.write(json.dumps(header) + "\n")
        for rec in result.trace:
            f.write(json.dumps(rec.to_json_dict()) + "\n")
    return result


def stage_synthesize(man: ExperimentManifest, out_dir: Path,
                     params: TriggerParams | None = None,
                     rate: int = 16000) -> TriggerParams:
    """Render the trigger baseband and its modulated-ultrasound carrier."""
    out_dir = Path(out_dir)
    if params is None:
        victims = _load_clips(man.victim_samples, rate)
        params = init_trigger(victims, man.trigger.segments_m, man.trigger.freqs_n,
                              man.trigger.segment_len_s, man.seed)
        save_trigger_params(out_dir / "trigger_params.json", params, man)
    baseband = synthesize_trigger(params, rate)
    raw = man.raw
    if "mic_response" in raw and "path_response" in raw:
        from .dsp import ResponseTable, precompensate
        baseband = precompensate(baseband,
                                 ResponseTable(tuple(map(tuple, raw["mic_response"]))),
                                 ResponseTable(tuple(map(tuple, raw["path_response"]))))
    pk = float(np.max(np.abs(baseband.samples)))
    norm = baseband if pk <= 1.0 else AudioClip(baseband.samples / pk, rate)
    write_wav(out_dir / "trigger.wav", norm)
    ultra = ssb_modulate(norm, man.channel)
    upk = float(np.max(np.abs(ultra.samples)))
    if upk > 1.0:
        ultra = AudioClip(ultra.samples / upk, ultra.rate)
    write_wav(out_dir / "trigger_ultrasound.wav", ultra)
    return params


def stage_enroll_attack(man: ExperimentManifest, scorer: ScorerHandle,
                        params: TriggerParams, out_dir: Path,
                        channel_sim: bool | None = None) -> Voiceprint:
    """Simulate the poisoned enrollment and store the stored voiceprint."""
    rate = scorer.rate
    channel_sim = man.channel_sim if channel_sim is None else channel_sim
    victims = _load_clips(man.victim_samples, rate)
    rng = _rng(man.seed, 71)
    vecs = []
    for clip in victims:
        room = max(0.0, clip.duration_s - params.duration_s)
        t_s = float(rng.uniform(0.0, room)) if room > 0 else 0.0
        captured = render_capture(params, man.channel, rate, base=clip,
                                  t_s=t_s, beta=man.enroll_beta,
                                  d_m=man.enroll_dist_m,
                                  channel_sim=channel_sim)
        vecs.append(embed(captured, scorer).vec)
    mean = np.mean(vecs, axis=0)
    poisoned = Voiceprint(mean / np.linalg.norm(mean), backend=scorer.backend)
    _dump_json(Path(out_dir) / "poisoned_enrollment.json", {
        "manifest_sha256": man.hash, "seed": man.seed,
        "victim": man.victim, "backend": scorer.backend,
        "channel_sim": channel_sim,
        "voiceprint": poisoned.vec.tolist(),
    })
    return poisoned


def make_trigger_probes(man: ExperimentManifest, params: TriggerParams,
                        rate: int, count: int | None = None,
                        channel_sim: bool | None = None,
                        seed_key: int = 83) -> list[AudioClip]:
    """Adversary probes: the trigger captured alone at random placements
    and distances inside a probe-length window."""
    channel_sim = man.channel_sim if channel_sim is None else channel_sim
    count = man.num_trigger_probes if count is None else count
    aug = build_augment_space(man, rate)
    rng = _rng(man.seed, seed_key)
    total = int(round(man.probe_len_s * rate))
    probes = []
    for _ in range(count):
        room = max(0.0, man.probe_len_s - params.duration_s)
        t_s = float(rng.uniform(0.0, room)) if room > 0 else 0.0
        d_m = float(rng.uniform(*aug.dist_range_m))
        base = AudioClip.silence(total, rate)
        probes.append(render_capture(params, man.channel, rate, base=base,
                                     t_s=t_s, d_m=d_m, channel_sim=channel_sim))
    return probes


def stage_evaluate(man: ExperimentManifest, scorer: ScorerHandle,
                   params: TriggerParams, poisoned: Voiceprint,
                   theta: float, eer: float | None, out_dir: Path,
                   channel_sim: bool | None = None,
                   theta_source: str = "calibrated") -> dict:
    """All tasks x (no defense + manifest defenses) -> report."""
    rate = scorer.rate
    enrolled = {man.victim: poisoned}
    for sid, group in man.cohort.items():
        if group["enroll"]:
            enrolled[sid] = enroll(_load_clips(group["enroll"], rate), scorer)
    genuine = _load_clips(man.heldout_samples, rate)
    triggers = make_trigger_probes(man, params, rate, channel_sim=channel_sim)
    defenses: list[DefenseSpec | None] = [None]
    defenses += [parse_defense(d) for d in man.defenses]
    rows: list[EvalRow] = []
    for task in ("SV", "CSI", "OSI"):
        cfg = EvalConfig(task=task, enrolled=enrolled, victim_id=man.victim,
                         genuine_probes=genuine, trigger_probes=triggers,
                         theta=theta)
        for d in defenses:
            rows.append(evaluate(cfg, scorer, defense=d))
    report = {
        "manifest_sha256": man.hash, "seed": man.seed,
        "victim": man.victim, "theta": theta, "eer": eer,
        "theta_source": theta_source,
        "rows": [{"task": r.task, "defense": r.defense,
                  "ACC": r.acc, "ASR": r.asr} for r in rows],
    }
    out_dir = Path(out_dir)
    _dump_json(out_dir / "report.json", report)
    with open(out_dir / "report.jsonl", "w") as f:
        for r in report["rows"]:
            rec = {"task": r["task"], "ACC": r["ACC"], "ASR": r["ASR"],
                   "theta": theta, "eer": eer, "defense": r["defense"]}
            f.write(json.dumps(rec) + "\n")
    (out_dir / "report.txt").write_text(format_report(report))
    return report


def format_report(report: dict) -> str:
    lines = [
        f"victim={report['victim']}  theta={report['theta']:.4f} "
        f"({report['theta_source']})  "
        + (f"EER={100 * report['eer']:.2f}%" if report.get("eer") is not None else ""),
        f"{'task':<5} {'ACC%':>7} {'ASR%':>7}  defense",
        "-" * 44,
    ]
    for r in report["rows"]:
        lines.append(f"{r['task']:<5} {r['ACC']:>7.1f} {r['ASR']:>7.1f}  {r['defense']}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, needs_manifest: bool = True):
    if needs_manifest:
        p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None,
                   help="override the manifest seed")
    p.add_argument("--scorer", default=None,
                   help="builtin | cmd:<argv> (overrides the manifest)")
    p.add_argument("--channel-sim", choices=("on", "off"), default=None)


def _prep(args) -> tuple[ExperimentManifest, ScorerHandle, bool | None]:
    man = load_manifest(args.manifest)
    if args.seed is not None:
        man.raw["seed"] = args.seed
        man.seed = args.seed
        from dataclasses import replace
        man.optim = replace(man.optim, seed=args.seed)
    if args.scorer is not None:
        man.scorer = args.scorer
    channel = None if args.channel_sim is None else (args.channel_sim == "on")
    return man, open_scorer(man), channel


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="sonoplant",
        description="Simulated ultrasonic enrollment-poisoning toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="generate the synthetic speaker corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speakers", type=int, default=6)
    p.add_argument("--enroll", type=int, default=3)
    p.add_argument("--probes", type=int, default=20)

    for name in ("calibrate", "synthesize", "optimize"):
        p = sub.add_parser(name)
        _add_common(p)
    p = sub.add_parser("enroll-attack")
    _add_common(p)
    p.add_argument("--params", required=True, type=Path)
    p = sub.add_parser("evaluate")
    _add_common(p)
    p.add_argument("--params", required=True, type=Path)
    p.add_argument("--enrollment", required=True, type=Path)
    p.add_argument("--calibration", type=Path, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--defense", action="append", default=None,
                   help="repeatable; overrides manifest defense list")

    args = ap.parse_args(argv)
    try:
        return _dispatch(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"sonoplant {args.command}: error: {e}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "make-corpus":
        stage_make_corpus(args.out, args.seed, args.speakers, args.enroll,
                          args.probes)
        print(f"corpus + manifest written under {args.out}")
        return 0

    man, scorer, channel = _prep(args)
    with scorer:
        if args.command == "calibrate":
            theta, eer = stage_calibrate(man, scorer, args.out)
            print(f"theta={theta:.4f} EER={100 * eer:.2f}%")
        elif args.command == "synthesize":
            stage_synthesize(man, args.out)
            print(f"trigger WAVs written under {args.out}")
        elif args.command == "optimize":
            for r in range(man.repeats):
                result = stage_optimize(man, scorer, args.out,
                                        channel_sim=channel, repeat_idx=r)
                last = result.trace[-1].j if result.trace else float("nan")
                print(f"repeat {r}: {len(result.trace)} epochs, final J={last:.4f}, "
                      f"queries={scorer.query_count}")
        elif args.command == "enroll-attack":
            params = load_trigger_params(args.params)
            stage_enroll_attack(man, scorer, params, args.out, channel_sim=channel)
            print(f"poisoned enrollment written under {args.out}")
        elif args.command == "evaluate":
            params = load_trigger_params(args.params)
            stored = json.loads(Path(args.enrollment).read_text())
            poisoned = Voiceprint(np.array(stored["voiceprint"]),
                                  backend=stored["backend"])
            theta, eer, src = args.theta, None, "manifest"
            if theta is None:
                cal_path = args.calibration or (args.out / "calibration.json")
                cal = json.loads(Path(cal_path).read_text())
                theta, eer, src = cal["theta"], cal["eer"], cal["theta_source"]
            if args.defense:
                man.defenses = args.defense
            report = stage_evaluate(man, scorer, params, poisoned, theta, eer,
                                    args.out, channel_sim=channel,
                                    theta_source=src)
            print(format_report(report))
        else:
            raise ValueError(f"unknown command {args.command!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
