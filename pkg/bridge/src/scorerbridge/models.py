"""Embedding model adapters.

`load_model` resolves a model spec string to an object with `.embed`,
`.dim`, `.rate`, `.provenance`:

  melstats            - bundled deterministic reference network (log-mel
                        front end, fixed seeded projection, stats pooling)
  torchscript:<path>  - any TorchScript module mapping a 1-D float32
                        waveform tensor to an embedding vector

No training happens here; weights are either analytic, seeded constants,
or come from the user's checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


def _mel_filterbank(num_filters: int, nfft: int, rate: int) -> torch.Tensor:
    def hz_to_mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    pts = np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2.0), num_filters + 2)
    hz = np.array([mel_to_hz(m) for m in pts])
    bins = np.arange(nfft // 2 + 1) * rate / nfft
    fb = np.zeros((num_filters, nfft // 2 + 1))
    for i in range(num_filters):
        lo, mid, hi = hz[i], hz[i + 1], hz[i + 2]
        up = (bins - lo) / (mid - lo)
        down = (hi - bins) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return torch.from_numpy(fb).float()


class MelStatsNet(torch.nn.Module):
    """Log-mel front end, fixed random projection, statistics pooling.

    All weights are generated from a fixed seed, so the module behaves
    like a frozen pretrained checkpoint: deterministic in eval mode, no
    gradients, no training anywhere.
    """

    FRAME = 400
    HOP = 160
    NFFT = 512
    N_MELS = 40
    HIDDEN = 128
    DIM = 192
    RATE = 16000

    def __init__(self, seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.register_buffer("window", torch.hann_window(self.FRAME))
        self.register_buffer("mel_fb", _mel_filterbank(self.N_MELS, self.NFFT,
                                                       self.RATE))
        w1 = torch.randn(self.N_MELS, self.HIDDEN, generator=gen)
        w1 = w1 / math.sqrt(self.N_MELS)
        w2 = torch.randn(2 * self.HIDDEN, self.DIM, generator=gen)
        w2 = w2 / math.sqrt(2 * self.HIDDEN)
        self.register_buffer("proj1", w1)
        self.register_buffer("proj2", w2)
        self.eval()

    @torch.no_grad()
    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        if wave.numel() < self.FRAME:
            raise ValueError(
                f"need at least {self.FRAME} samples, got {wave.numel()}")
        frames = wave.unfold(0, self.FRAME, self.HOP) * self.window
        mag = torch.fft.rfft(frames, n=self.NFFT, dim=1).abs()
        mel = mag @ self.mel_fb.T
        logmel = torch.log(torch.clamp(mel, min=1e-10))
        h = torch.tanh(logmel @ self.proj1)
        stats = torch.cat([h.mean(dim=0), h.std(dim=0)])
        emb = stats @ self.proj2
        return emb / torch.linalg.norm(emb)


@dataclass
class EmbeddingModel:
    net: torch.nn.Module
    dim: int
    rate: int
    provenance: str

    def embed(self, wave: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(wave, dtype=np.float32))
        with torch.no_grad():
            emb = self.net(x)
        out = emb.detach().cpu().numpy().astype(np.float64).reshape(-1)
        norm = float(np.linalg.norm(out))
        if not np.isfinite(out).all() or norm == 0.0:
            raise ValueError("model produced a degenerate embedding")
        return out / norm


def load_model(spec: str, device: str = "cpu") -> EmbeddingModel:
    if spec == "melstats":
        net = MelStatsNet().to(device)
        return EmbeddingModel(net, MelStatsNet.DIM, MelStatsNet.RATE,
                              "builtin melstats reference (seed 1234)")
    if spec.startswith("torchscript:"):
        path = spec.split(":", 1)[1]
        net = torch.jit.load(path, map_location=device)
        net.eval()
        probe = torch.zeros(16000)
        with torch.no_grad():
            out = net(probe)
        dim = int(out.reshape(-1).shape[0])
        return EmbeddingModel(net, dim, 16000, f"torchscript checkpoint {path}")
    raise ValueError(f"unknown model spec {spec!r} "
                     "(expected 'melstats' or 'torchscript:<path>')")
