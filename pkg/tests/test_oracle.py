"""Builtin scorer, cosine scoring, enrollment, and the wire-protocol client."""

import json
import sys

import numpy as np
import pytest

from sonoplant.audio import AudioClip
from sonoplant.corpus import generate_speaker_clips
from sonoplant.oracle import (EmbeddingError, ScorerHandle,
                              ScorerProtocolError, ScorerUnavailableError,
                              Voiceprint, cosine_score, embed, enroll,
                              pcm16_decode, pcm16_encode)

RATE = 16000


@pytest.fixture(scope="module")
def scorer():
    return ScorerHandle.builtin()


@pytest.fixture(scope="module")
def clips():
    return {i: generate_speaker_clips(17, i, 5, n_speakers=2) for i in range(2)}


def disjoint_band_clip(formants, seed, dur=2.0):
    """Speaker as the spec example frames it: a sine mixture confined to
    its own formant bands, with mild per-utterance variation."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(dur * RATE)) / RATE
    x = np.zeros(len(t))
    for f in formants:
        env = 0.3 + 0.7 * (0.5 + 0.5 * np.sin(
            2 * np.pi * rng.uniform(1.5, 4.0) * t + rng.uniform(0, 6)))
        x += rng.uniform(0.6, 1.0) * env * np.sin(
            2 * np.pi * f * (1 + rng.uniform(-0.02, 0.02)) * t
            + rng.uniform(0, 6))
    x += 0.01 * rng.standard_normal(len(t))
    return AudioClip(0.6 * x / np.max(np.abs(x)), RATE)


def test_voiceprint_unit_norm_enforced():
    with pytest.raises(ValueError):
        Voiceprint(np.array([1.0, 1.0]))
    vp = Voiceprint(np.array([0.6, 0.8]))
    assert vp.dim == 2


def test_embed_deterministic(scorer, clips):
    a = embed(clips[0][0], scorer)
    b = embed(clips[0][0], scorer)
    assert cosine_score(a, b) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(a.vec) == pytest.approx(1.0, abs=1e-9)


def test_embed_gain_invariance(scorer):
    # property over 20 seeded clips
    rng = np.random.default_rng(55)
    t = np.arange(RATE) / RATE
    for trial in range(20):
        x = np.zeros(RATE)
        for f in rng.uniform(150, 3900, 5):
            x += 0.12 * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        x += 0.005 * rng.standard_normal(RATE)
        clip = AudioClip(x, RATE)
        half = AudioClip(0.5 * x, RATE)
        assert cosine_score(embed(clip, scorer), embed(half, scorer)) >= 0.999


def test_cross_speaker_below_same_speaker(scorer):
    # two speakers on disjoint formant bands, 10 seeded clips total
    bands_a = (320.0, 1150.0, 2250.0)
    bands_b = (680.0, 1650.0, 3150.0)
    embs0 = [embed(disjoint_band_clip(bands_a, 100 + i), scorer)
             for i in range(5)]
    embs1 = [embed(disjoint_band_clip(bands_b, 200 + i), scorer)
             for i in range(5)]
    same0 = [cosine_score(a, b) for i, a in enumerate(embs0)
             for b in embs0[i + 1:]]
    same1 = [cosine_score(a, b) for i, a in enumerate(embs1)
             for b in embs1[i + 1:]]
    cross = [cosine_score(a, b) for a in embs0 for b in embs1]
    assert max(cross) < min(same0)
    assert max(cross) < min(same1)


def test_embed_wrong_rate_rejected(scorer):
    with pytest.raises(EmbeddingError):
        embed(AudioClip(np.zeros(8000), 8000), scorer)


def test_embed_too_short_rejected(scorer):
    with pytest.raises(ValueError):
        embed(AudioClip(np.zeros(10), RATE), scorer)


def test_query_count_tally(clips):
    s = ScorerHandle.builtin()
    assert s.query_count == 0
    embed(clips[0][0], s)
    embed(clips[0][1], s)
    assert s.query_count == 2
    enroll(clips[0][:3], s)
    assert s.query_count == 5


def test_cosine_analytic_values():
    e1 = Voiceprint(np.array([1.0, 0.0]))
    e2 = Voiceprint(np.array([0.0, 1.0]))
    diag = Voiceprint(np.array([1.0, 1.0]) / np.sqrt(2.0))
    assert cosine_score(e1, e1) == pytest.approx(1.0)
    assert cosine_score(e1, e2) == pytest.approx(0.0)
    assert cosine_score(e1, diag) == pytest.approx(0.70710678, abs=1e-8)


def test_cosine_rejects_mismatch():
    a = Voiceprint(np.array([1.0, 0.0]))
    b = Voiceprint(np.array([1.0, 0.0, 0.0]) / 1.0)
    with pytest.raises(ValueError):
        cosine_score(a, b)
    c = Voiceprint(np.array([1.0, 0.0]), backend="external:foo")
    with pytest.raises(ValueError):
        cosine_score(a, c)


def test_enroll_single_equals_embed(scorer, clips):
    direct = embed(clips[0][0], scorer)
    enrolled = enroll([clips[0][0]], scorer)
    assert cosine_score(direct, enrolled) == pytest.approx(1.0, abs=1e-12)


def test_enroll_identical_samples(scorer, clips):
    x = clips[0][0]
    enrolled = enroll([x, x, x], scorer)
    assert cosine_score(enrolled, embed(x, scorer)) == pytest.approx(1.0, abs=1e-12)


def test_enroll_mean_cosine_bound(scorer, clips):
    # brute-force oracle over the constituents
    embs = [embed(c, scorer) for c in clips[0][:3]]
    enrolled = enroll(clips[0][:3], scorer)
    pairwise = [cosine_score(a, b) for i, a in enumerate(embs)
                for b in embs[i + 1:]]
    for e in embs:
        assert cosine_score(enrolled, e) >= min(pairwise) - 1e-9


def test_enroll_empty_rejected(scorer):
    with pytest.raises(ValueError):
        enroll([], scorer)


def test_pcm16_round_trip():
    rng = np.random.default_rng(0)
    x = np.round(rng.uniform(-1, 0.99, 512) * 32768.0) / 32768.0
    back = pcm16_decode(pcm16_encode(x))
    np.testing.assert_allclose(back, x, atol=1e-12)


# ---------------------------------------------------------------------------
# external wire protocol (against a minimal in-test server)
# ---------------------------------------------------------------------------

STUB = r"""
import sys, json, base64
import numpy as np
for line in sys.stdin:
    try:
        req = json.loads(line)
        if req["op"] == "hello":
            print(json.dumps({"ok": True, "dim": 4, "rate": 16000}), flush=True)
        elif req["op"] == "embed":
            raw = base64.b64decode(req["pcm16_b64"])
            x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
            v = np.array([np.mean(x), np.std(x), np.max(x, initial=0.0), 1.0])
            v = v / np.linalg.norm(v)
            print(json.dumps({"ok": True, "embedding": v.tolist()}), flush=True)
        else:
            print(json.dumps({"ok": False, "error": "unknown op"}), flush=True)
    except Exception as e:
        print(json.dumps({"ok": False, "error": str(e)}), flush=True)
"""


def stub_argv(body=STUB):
    return [sys.executable, "-u", "-c", body]


def test_external_handshake_and_embed():
    with ScorerHandle.external(stub_argv()) as s:
        assert s.dim == 4
        assert s.rate == RATE
        clip = AudioClip(np.linspace(-0.2, 0.2, 4000), RATE)
        vp = embed(clip, s)
        assert vp.dim == 4
        assert vp.backend.startswith("external:")
        assert s.query_count == 1
        vp2 = embed(clip, s)
        assert np.array_equal(vp.vec, vp2.vec)


def test_external_spawn_failure():
    with pytest.raises(ScorerUnavailableError):
        ScorerHandle.external(["/nonexistent/binary-xyz"])


def test_external_protocol_violation():
    bad = "import sys\nfor line in sys.stdin:\n    print('not json', flush=True)\n"
    with pytest.raises(ScorerProtocolError):
        ScorerHandle.external(stub_argv(bad))


def test_external_error_reply_raises_protocol_error():
    with ScorerHandle.external(stub_argv()) as s:
        s_dim = s.dim
        bad_clip = AudioClip(np.zeros(100), 8000)
        with pytest.raises(EmbeddingError):
            embed(bad_clip, s)  # wrong rate is caught client-side
        assert s_dim == 4


def test_external_eof_raises_unavailable():
    quit_after_hello = (
        "import sys, json\n"
        "line = sys.stdin.readline()\n"
        "print(json.dumps({'ok': True, 'dim': 2, 'rate': 16000}), flush=True)\n"
    )
    s = ScorerHandle.external(stub_argv(quit_after_hello))
    clip = AudioClip(np.zeros(4000), RATE)
    with pytest.raises(ScorerUnavailableError):
        embed(clip, s)
