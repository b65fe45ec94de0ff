"""Pure-numpy implementations of the hot render kernels.

Selected by :mod:`sonoplant.kernels` when the compiled extension is not
available (or is disabled via SONOPLANT_KERNEL=python). Semantics must
match `_render_kernel.pyx`; the two paths agree to ~1e-10 absolute, not
bit-for-bit, because summation orders differ.
"""

from __future__ import annotations

import numpy as np


def render_sine_bank(amps: np.ndarray, freqs_hz: np.ndarray,
                     seg_samples: int, rate: float,
                     ramp_samples: int) -> np.ndarray:
    """Render M segments of N-sine banks, each starting at phase 0.

    Segment m is sum_n amps[m,n] * sin(2*pi*freqs_hz[m,n] * t) with t local
    to the segment. The last `ramp_samples` of every segment are shaped by
    a raised-cosine fade-out so the jump back to phase 0 at the next
    segment does not click.
    """
    amps = np.asarray(amps, dtype=np.float64)
    freqs_hz = np.asarray(freqs_hz, dtype=np.float64)
    m, n = amps.shape
    seg_samples = int(seg_samples)
    out = np.empty(m * seg_samples, dtype=np.float64)
    t = np.arange(seg_samples, dtype=np.float64) / rate
    ramp = None
    if ramp_samples > 0:
        k = np.arange(ramp_samples, dtype=np.float64)
        ramp = 0.5 * (1.0 + np.cos(np.pi * (k + 1.0) / ramp_samples))
    for i in range(m):
        seg = amps[i] @ np.sin(2.0 * np.pi * freqs_hz[i][:, None] * t[None, :])
        if ramp is not None:
            seg[seg_samples - ramp_samples:] *= ramp
        out[i * seg_samples:(i + 1) * seg_samples] = seg
    return out
