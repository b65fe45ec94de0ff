"""Minimal RIFF/WAVE reader and writer.

Reads PCM 16-bit and IEEE float 32-bit, mono or stereo (stereo is
downmixed by averaging); writes PCM 16-bit mono. Int samples map through
the fixed scale 32768 in both directions, so write-then-read of a clip
already on the 16-bit lattice is bit-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .audio import AudioClip

PCM16_SCALE = 32768.0


class WavError(ValueError):
    """Base class for WAV file problems."""


class TruncatedWavError(WavError):
    """File ends before the structure it promises is complete."""


class UnsupportedCodecError(WavError):
    """The file is valid RIFF but not PCM16 / float32."""


def _read_exact(f, n: int, what: str) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise TruncatedWavError(f"truncated WAV: expected {n} bytes of {what}, "
                                f"got {len(raw)}")
    return raw


def read_wav(path) -> AudioClip:
    path = Path(path)
    with open(path, "rb") as f:
        riff, _size, wave = struct.unpack("<4sI4s", _read_exact(f, 12, "RIFF header"))
        if riff != b"RIFF" or wave != b"WAVE":
            raise WavError(f"{path} is not a RIFF/WAVE file")
        fmt = None
        data = None
        while True:
            head = f.read(8)
            if len(head) == 0:
                break
            if len(head) < 8:
                raise TruncatedWavError("truncated chunk header")
            cid, clen = struct.unpack("<4sI", head)
            if cid == b"fmt ":
                fmt = _read_exact(f, clen, "fmt chunk")
            elif cid == b"data":
                data = _read_exact(f, clen, "data chunk")
            else:
                _read_exact(f, clen + (clen & 1), f"chunk {cid!r}")
            if fmt is not None and data is not None:
                break
        if fmt is None:
            raise TruncatedWavError("missing fmt chunk")
        if data is None:
            raise TruncatedWavError("missing data chunk")
        if len(fmt) < 16:
            raise TruncatedWavError("fmt chunk too short")
        (audio_format, channels, rate, _br, _ba, bits) = struct.unpack(
            "<HHIIHH", fmt[:16])
        if channels not in (1, 2):
            raise UnsupportedCodecError(f"unsupported channel count {channels}")
        if audio_format == 1 and bits == 16:
            x = np.frombuffer(data, dtype="<i2").astype(np.float64) / PCM16_SCALE
        elif audio_format == 3 and bits == 32:
            x = np.frombuffer(data, dtype="<f4").astype(np.float64)
        else:
            raise UnsupportedCodecError(
                f"unsupported codec: format tag {audio_format}, {bits}-bit "
                "(only PCM16 and float32 are readable)")
        if channels == 2:
            if len(x) % 2:
                x = x[:-1]
            x = x.reshape(-1, 2).mean(axis=1)
        return AudioClip(x, rate)


def write_wav(path, clip: AudioClip) -> None:
    """PCM 16-bit mono."""
    path = Path(path)
    ints = np.clip(np.round(clip.samples * PCM16_SCALE), -32768, 32767).astype("<i2")
    data = ints.tobytes()
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI4s", b"RIFF", 36 + len(data), b"WAVE"))
        f.write(struct.pack("<4sI", b"fmt ", 16))
        f.write(struct.pack("<HHIIHH", 1, 1, clip.rate, clip.rate * 2, 2, 16))
        f.write(struct.pack("<4sI", b"data", len(data)))
        f.write(data)
