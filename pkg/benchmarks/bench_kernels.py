"""Compare the compiled render kernel against the numpy fallback.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from sonoplant import _kernels_py, kernels


def bench(fn, amps, freqs, seg, rate, ramp, repeats=30):
    fn(amps, freqs, seg, rate, ramp)  # warmup
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(amps, freqs, seg, rate, ramp)
    return (time.perf_counter() - t0) / repeats * 1000.0


def main():
    rate = 16000.0
    ramp = 80
    cases = [
        ("small  (M=2,  N=4,  1 s)", 2, 4, 8000),
        ("medium (M=8,  N=16, 4 s)", 8, 16, 8000),
        ("fine   (M=16, N=12, 4 s)", 16, 12, 4000),
    ]
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'case':<28} {'numpy ms':>10} {'cython ms':>10} {'speedup':>9}")
    for name, m, n, seg in cases:
        amps = rng.uniform(0, 1, (m, n))
        freqs = rng.uniform(50, 3999, (m, n))
        t_py = bench(_kernels_py.render_sine_bank, amps, freqs, seg, rate, ramp)
        if kernels.BACKEND == "cython":
            t_cy = bench(kernels.render_sine_bank, amps, freqs, seg, rate, ramp)
            a = kernels.render_sine_bank(amps, freqs, seg, rate, ramp)
            b = _kernels_py.render_sine_bank(amps, freqs, seg, rate, ramp)
            err = np.max(np.abs(a - b))
            print(f"{name:<28} {t_py:>10.2f} {t_cy:>10.2f} {t_py / t_cy:>8.1f}x"
                  f"   (max |diff| {err:.1e})")
        else:
            print(f"{name:<28} {t_py:>10.2f} {'n/a':>10} {'n/a':>9}")


if __name__ == "__main__":
    main()
