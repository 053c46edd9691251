"""Benchmark the jitted scan kernels against their pure-numpy fallbacks.

By default both paths are timed in-process (the fallback is the kernel's
uncompiled py_func). Running the whole suite with HYBRIDSSM_NO_NUMBA=1
instead times the fallback dispatch end to end.

Usage: python benchmarks/bench_kernels.py [--T 4096] [--d-k 64] [--repeats 5]
"""

import argparse
import time

import numpy as np

from hybridssm import kernels as K


def timeit(fn, args, repeats):
    fn(*args)  # warm-up (and JIT compile on the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--T", type=int, default=4096, help="sequence length")
    parser.add_argument("--d-k", type=int, default=64)
    parser.add_argument("--d-v", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--chebyshev-r", type=int, default=30)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    T, d_k, d_v = args.T, args.d_k, args.d_v
    k = rng.standard_normal((T, d_k))
    k /= np.linalg.norm(k, axis=1, keepdims=True)  # GDN's erase is contractive for ||k|| <= 1
    v = rng.standard_normal((T, d_v))
    q = rng.standard_normal((T, d_k))
    gamma = rng.uniform(0.9, 1.0, T)
    beta = rng.uniform(0.1, 0.9, T)
    lam = np.full(T, 0.5)
    s0 = np.zeros((d_v, d_k))
    g = rng.standard_normal((d_k, d_k))
    h = g @ g.T
    rhs = rng.standard_normal(d_k)
    b = 0.5 + float(np.linalg.norm(h))
    u = rng.standard_normal((T, d_v))
    w = rng.standard_normal(4)

    cases = [
        ("mamba2_scan", K.mamba2_scan, (k, v, q, gamma, s0)),
        ("gdn_scan", K.gdn_scan, (k, v, q, gamma, beta, s0)),
        ("gka_info_forward (exact)", K.gka_info_forward,
         (k, v, q, gamma, beta, lam, -1.0, 0, 1.0)),
        ("gka_info_forward (cheb r=%d)" % args.chebyshev_r, K.gka_info_forward,
         (k, v, q, gamma, beta, lam, 0.05, args.chebyshev_r, 1.0)),
        ("gka_recurrent_scan", K.gka_recurrent_scan, (k, v, q, beta, 0.5)),
        ("chebyshev_dense", K.chebyshev_dense, (h, 0.5, rhs, args.chebyshev_r, 0.5, b)),
        ("conv1d_direct", K.conv1d_direct, (u, w)),
    ]

    backend = "numba" if K.USING_NUMBA else "numpy (fallback)"
    print(f"active backend: {backend}   T={T} d_k={d_k} d_v={d_v}")
    print(f"{'kernel':<32} {'active':>12} {'pure numpy':>12} {'speedup':>9}")
    for name, fn, fargs in cases:
        t_active = timeit(fn, fargs, args.repeats)
        py = K.py_impl(fn)
        t_py = timeit(py, fargs, args.repeats) if py is not fn else t_active
        speed = t_py / t_active if t_active > 0 else float("nan")
        print(f"{name:<32} {t_active * 1e3:>10.2f}ms {t_py * 1e3:>10.2f}ms {speed:>8.1f}x")


if __name__ == "__main__":
    main()
