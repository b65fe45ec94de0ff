# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled sine-bank render kernel.

Dominates the optimizer's inner loop (one render per objective query), so
the per-sine evaluation uses the Chebyshev rotation recurrence
    s[k+1] = 2*cos(w)*s[k] - s[k-1]
instead of a libm sin() per sample, resynchronized against exact sin/cos
every RESYNC samples to bound drift below ~1e-10 per segment.
"""

from libc.math cimport sin, cos, M_PI

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF RESYNC = 1024


def render_sine_bank(amps, freqs_hz, int seg_samples, double rate,
                     int ramp_samples):
    """Same contract as sonoplant._kernels_py.render_sine_bank."""
    cdef const double[:, :] av = np.ascontiguousarray(amps, dtype=np.float64)
    cdef const double[:, :] fv = np.ascontiguousarray(freqs_hz, dtype=np.float64)
    cdef int m = av.shape[0]
    cdef int n = av.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(m * seg_samples, dtype=np.float64)
    cdef double[:] ov = out

    cdef int i, j, k, base
    cdef double w, amp, coef, s_prev, s_cur, s_next, theta
    for i in range(m):
        base = i * seg_samples
        for j in range(n):
            amp = av[i, j]
            if amp == 0.0:
                continue
            w = 2.0 * M_PI * fv[i, j] / rate
            coef = 2.0 * cos(w)
            # k = 0 -> sin(0) = 0
            s_prev = 0.0
            s_cur = sin(w)
            if seg_samples > 0:
                ov[base] += 0.0
            for k in range(1, seg_samples):
                if k % RESYNC == 0:
                    theta = w * k
                    s_cur = sin(theta)
                    s_prev = sin(theta - w)
                ov[base + k] += amp * s_cur
                s_next = coef * s_cur - s_prev
                s_prev = s_cur
                s_cur = s_next

    cdef double u
    if ramp_samples > 0:
        for i in range(m):
            base = (i + 1) * seg_samples - ramp_samples
            for k in range(ramp_samples):
                u = 0.5 * (1.0 + cos(M_PI * (k + 1.0) / ramp_samples))
                ov[base + k] *= u
    return out
