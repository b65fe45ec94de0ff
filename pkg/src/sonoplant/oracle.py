"""The black-box scorer boundary.

The builtin backend is a deterministic statistics pooler over the cepstral
features (per-coefficient mean ++ std, L2-normalized): the optimizer only
needs similarity scores, so a training-free oracle is enough for
desk-scale verification. Real voiceprint models attach through the wire
protocol: line-delimited JSON over a child process's stdin/stdout,

    {"op":"hello"}                         -> {"ok":true,"dim":D,"rate":R}
    {"op":"embed","rate":R,"pcm16_b64":..} -> {"ok":true,"embedding":[..]}
    any failure                            -> {"ok":false,"error":"..."}

with PCM payloads little-endian signed 16-bit mono, base64-encoded, one
request per line and responses in request order.
"""

from __future__ import annotations

import base64
import json
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .features import DEFAULT_FEATURES, FeatureConfig, mfcc_features

BUILTIN_RATE = 16000
BUILTIN_DIM = 2 * DEFAULT_FEATURES.num_coeffs

# The pooled statistics use the cepstra *before* mean normalization: CMN
# would make every per-coefficient mean identically zero and waste half
# the embedding. Gain invariance is already guaranteed by dropping c0.
# The raised log floor is a microphone-noise-floor prior: scoring must not
# distinguish "empty band" from "nearly empty band", or any transform that
# fills or drains a quiet band (quantization dither, band-limiting
# defenses) swings the embedding by tens of log units.
BUILTIN_FEATURES = FeatureConfig(cmn=False, unit_area_filters=True, relative_floor=0.05)


class ScorerUnavailableError(RuntimeError):
    """External scorer process could not be reached (spawn/EOF/broken pipe)."""


class ScorerProtocolError(RuntimeError):
    """External scorer replied, but not according to the wire protocol."""


class EmbeddingError(ValueError):
    """The clip cannot be embedded (too short, wrong rate, degenerate)."""


@dataclass(frozen=True)
class Voiceprint:
    """Unit-norm embedding. `backend` tags provenance; cosine scoring
    refuses to compare embeddings from different backends."""

    vec: np.ndarray
    backend: str = "builtin"

    def __post_init__(self):
        v = np.asarray(self.vec, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("voiceprint contains NaN or Inf")
        n = float(np.linalg.norm(v))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"voiceprint norm {n} is not 1 within 1e-9")
        if v is self.vec and v.flags.writeable:
            v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "vec", v)

    @property
    def dim(self) -> int:
        return self.vec.shape[0]


def _unit(vec: np.ndarray, backend: str) -> Voiceprint:
    n = float(np.linalg.norm(vec))
    if n < 1e-12:
        raise EmbeddingError("degenerate (all-zero) embedding")
    return Voiceprint(np.asarray(vec, dtype=np.float64) / n, backend)


def pcm16_encode(samples: np.ndarray) -> bytes:
    ints = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767)
    return ints.astype("<i2").tobytes()


def pcm16_decode(raw: bytes) -> np.ndarray:
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


class ScorerHandle:
    """Handle on a scorer backend with a running query tally.

    The builtin backend is pure and reentrant. The external backend
    serializes requests (one in flight per handle); hold several handles
    for parallel query streams.
    """

    def __init__(self, backend: str, rate: int, dim: int | None,
                 proc: subprocess.Popen | None = None,
                 feature_cfg: FeatureConfig = DEFAULT_FEATURES):
        self.backend = backend
        self.rate = rate
        self.dim = dim
        self.feature_cfg = feature_cfg
        self._proc = proc
        self._lock = threading.Lock()
        self._queries = 0

    @classmethod
    def builtin(cls, feature_cfg: FeatureConfig = BUILTIN_FEATURES) -> "ScorerHandle":
        dim = 2 * feature_cfg.num_coeffs
        return cls("builtin", BUILTIN_RATE, dim, feature_cfg=feature_cfg)

    @classmethod
    def external(cls, argv: list[str]) -> "ScorerHandle":
        try:
            proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        except OSError as e:
            raise ScorerUnavailableError(f"cannot spawn scorer {argv!r}: {e}") from e
        handle = cls("external:" + " ".join(argv), 0, None, proc=proc)
        reply = handle._round_trip({"op": "hello"})
        try:
            handle.dim = int(reply["dim"])
            handle.rate = int(reply["rate"])
        except (KeyError, TypeError, ValueError) as e:
            handle.close()
            raise ScorerProtocolError(f"malformed hello reply: {reply!r}") from e
        return handle

    @property
    def query_count(self) -> int:
        return self._queries

    def _round_trip(self, request: dict) -> dict:
        proc = self._proc
        if proc is None or proc.poll() is not None:
            raise ScorerUnavailableError("scorer process is not running")
        line = json.dumps(request)
        with self._lock:
            try:
                proc.stdin.write(line + "\n")
                proc.stdin.flush()
                reply_line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as e:
                raise ScorerUnavailableError(f"scorer pipe failed: {e}") from e
        if not reply_line:
            raise ScorerUnavailableError("scorer closed its output stream")
        try:
            reply = json.loads(reply_line)
        except json.JSONDecodeError as e:
            raise ScorerProtocolError(f"scorer reply is not JSON: {reply_line!r}") from e
        if not isinstance(reply, dict) or "ok" not in reply:
            raise ScorerProtocolError(f"scorer reply missing 'ok': {reply!r}")
        if not reply["ok"]:
            raise ScorerProtocolError(f"scorer error: {reply.get('error', '?')}")
        return reply

    def close(self) -> None:
        proc = self._proc
        if proc is not None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            proc.wait(timeout=10)
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def embed(x: AudioClip, s: ScorerHandle) -> Voiceprint:
    """One scorer query: clip in, unit-norm voiceprint out."""
    if x.rate != s.rate:
        raise EmbeddingError(
            f"clip rate {x.rate} differs from scorer rate {s.rate}; resample first")
    with s._lock:
        s._queries += 1
    if s.backend == "builtin":
        feats = mfcc_features(x, s.feature_cfg).frames
        if feats.shape[0] < 1:
            raise EmbeddingError("clip yields no feature frames")
        vec = np.concatenate([feats.mean(axis=0), feats.std(axis=0)])
        return _unit(vec, s.backend)
    reply = s._round_trip({
        "op": "embed",
        "rate": x.rate,
        "pcm16_b64": base64.b64encode(pcm16_encode(x.samples)).decode("ascii"),
    })
    emb = reply.get("embedding")
    if not isinstance(emb, list) or (s.dim is not None and len(emb) != s.dim):
        raise ScorerProtocolError(
            f"embedding reply has wrong shape (expected dim {s.dim})")
    return _unit(np.asarray(emb, dtype=np.float64), s.backend)


def cosine_score(a: Voiceprint, b: Voiceprint) -> float:
    if a.dim != b.dim:
        raise ValueError(f"voiceprint dimension mismatch: {a.dim} vs {b.dim}")
    if a.backend != b.backend:
        raise ValueError(
            f"refusing to compare voiceprints from different backends: "
            f"{a.backend!r} vs {b.backend!r}")
    return float(np.dot(a.vec, b.vec))


def enroll(samples: list[AudioClip], s: ScorerHandle) -> Voiceprint:
    """Average the per-sample voiceprints and re-normalize."""
    if not samples:
        raise ValueError("enrollment needs at least one sample")
    vecs = [embed(x, s).vec for x in samples]
    return _unit(np.mean(vecs, axis=0), s.backend)
