"""Compare the two conv2d kernel backends at training-relevant sizes.

Usage: python3 benchmarks/bench_kernels.py [repeats]

Prints per-case timings for forward, weight-gradient, and input-gradient of
both the numpy (im2col + GEMM) backend and, when the compiled extension is
importable, the Cython direct-loop backend, then a summary verdict.
"""

from __future__ import annotations

import sys
import time

import numpy as np

from d2ae.kernels import conv_py

try:
    from d2ae.kernels import _conv_cy
except ImportError:
    _conv_cy = None

# (batch, c_in, c_out, spatial, stride) mirroring the encoder/decoder layers
CASES = [
    (32, 3, 16, 32, 2),
    (32, 16, 32, 16, 2),
    (32, 32, 64, 8, 2),
    (32, 64, 64, 4, 2),
    (32, 64, 64, 4, 1),
    (32, 64, 32, 16, 1),
    (32, 16, 16, 32, 1),
]


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backend(tag, forward, backward_w, backward_x, repeats):
    total = 0.0
    rows = []
    for n, c_in, c_out, s, stride in CASES:
        rng = np.random.default_rng(0)
        x = rng.standard_normal((n, c_in, s, s)).astype(np.float32)
        w = rng.standard_normal((c_out, c_in, 3, 3)).astype(np.float32)
        out = forward(x, w, stride, 1)
        gout = np.ones_like(out)
        t_f = timeit(lambda: forward(x, w, stride, 1), repeats)
        t_w = timeit(lambda: backward_w(x, w.shape, gout, stride, 1), repeats)
        t_x = timeit(lambda: backward_x(x.shape, w, gout, stride, 1), repeats)
        case_total = t_f + t_w + t_x
        total += case_total
        rows.append((n, c_in, c_out, s, stride, t_f, t_w, t_x, case_total))
    print(f"\n{tag}")
    print(f"{'case':>22} {'fwd ms':>8} {'dW ms':>8} {'dX ms':>8} {'sum ms':>8}")
    for n, ci, co, s, st, t_f, t_w, t_x, tt in rows:
        case = f"{n}x{ci}->{co} @{s} s{st}"
        print(f"{case:>22} {t_f*1e3:8.2f} {t_w*1e3:8.2f} {t_x*1e3:8.2f} {tt*1e3:8.2f}")
    print(f"{'total':>22} {'':>8} {'':>8} {'':>8} {total*1e3:8.2f}")
    return total


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    t_py = bench_backend("numpy (im2col + GEMM)", conv_py.conv2d_forward,
                         conv_py.conv2d_backward_w, conv_py.conv2d_backward_x,
                         repeats)
    if _conv_cy is None:
        print("\ncompiled backend not built; only the numpy backend was timed")
        return
    t_cy = bench_backend("cython (direct loops)", _conv_cy.conv2d_forward,
                         _conv_cy.conv2d_backward_w, _conv_cy.conv2d_backward_x,
                         repeats)
    ratio = t_cy / t_py
    faster = "numpy" if ratio > 1.0 else "cython"
    print(f"\ncython/numpy total time ratio: {ratio:.2f}x -> {faster} backend "
          f"is faster at these sizes (default stays numpy; set "
          f"D2AE_KERNELS=cython to override)")


if __name__ == "__main__":
    main()
