"""The scorer wire protocol, server side.

Line-delimited JSON over stdin/stdout, one request per line, replies in
request order, one request in flight (keeps the client's black-box query
accounting exact):

    {"op":"hello"}                          -> {"ok":true,"dim":D,"rate":R,"model":...}
    {"op":"embed","rate":R,"pcm16_b64":..}  -> {"ok":true,"embedding":[...]}

Anything malformed gets {"ok":false,"error":...} and the loop continues;
only EOF ends it.
"""

from __future__ import annotations

import base64
import binascii
import json
import sys

import numpy as np

from .models import EmbeddingModel


def _decode_pcm16(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, TypeError) as e:
        raise ValueError(f"bad base64 payload: {e}") from e
    if len(raw) % 2:
        raise ValueError("PCM16 payload has odd byte length")
    return np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0


def handle_request(model: EmbeddingModel, line: str) -> dict:
    try:
        req = json.loads(line)
    except json.JSONDecodeError as e:
        return {"ok": False, "error": f"request is not valid JSON: {e}"}
    if not isinstance(req, dict) or "op" not in req:
        return {"ok": False, "error": "request must be an object with an 'op'"}
    op = req["op"]
    if op == "hello":
        return {"ok": True, "dim": model.dim, "rate": model.rate,
                "model": model.provenance}
    if op == "embed":
        try:
            rate = int(req["rate"])
            if rate != model.rate:
                return {"ok": False,
                        "error": f"model expects rate {model.rate}, got {rate}"}
            wave = _decode_pcm16(req["pcm16_b64"])
            emb = model.embed(wave)
        except KeyError as e:
            return {"ok": False, "error": f"missing field {e}"}
        except Exception as e:  # noqa: BLE001 - reply, never crash the loop
            return {"ok": False, "error": f"{type(e).__name__}: {e}"}
        return {"ok": True, "embedding": emb.tolist()}
    return {"ok": False, "error": f"unknown op: {op!r}"}


def serve(model: EmbeddingModel, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            reply = {"ok": False, "error": "empty request line"}
        else:
            reply = handle_request(model, line)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
