"""Numba vs numpy timings for the sampling and LCS kernels.

Run ``python benchmarks/bench_kernels.py``. When numba is missing (or
disabled with CALREASON_DISABLE_NUMBA=1) the loop kernels run as plain
Python, which is the slow path being compared against.
"""
import argparse
import time

import numpy as np

from calreason import kernels
from calreason.grammar import BOS, EOS
from calreason.policy import DEFAULT_CONFIG, init_params, position_bits


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_sampling(n_seqs, repeats):
    p = init_params(0, 0.5)
    pos = position_bits(DEFAULT_CONFIG)
    rng = np.random.default_rng(0)
    conds = rng.normal(size=(n_seqs, DEFAULT_CONFIG.condition_dim))
    us = rng.random((n_seqs, DEFAULT_CONFIG.max_len - 1))

    def run(kernel):
        def go():
            for c, u in zip(conds, us):
                kernel(p.W1, p.b1, p.W2, p.b2, c, u, 1.0, False, DEFAULT_CONFIG.max_len, BOS, EOS, pos)
        return go

    run(kernels.sample_tokens_loop)()  # compile outside the timed region
    return best_of(run(kernels.sample_tokens_numpy), repeats), best_of(run(kernels.sample_tokens_loop), repeats)


def bench_lcs(n_pairs, length, repeats):
    rng = np.random.default_rng(1)
    pairs = [(rng.integers(0, 20, length), rng.integers(0, 20, length)) for _ in range(n_pairs)]

    def run(kernel):
        def go():
            for a, b in pairs:
                kernel(a, b)
        return go

    run(kernels.lcs_length_loop)()
    return best_of(run(kernels.lcs_length_numpy), repeats), best_of(run(kernels.lcs_length_loop), repeats)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seqs", type=int, default=200)
    ap.add_argument("--pairs", type=int, default=500)
    ap.add_argument("--length", type=int, default=40)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    loop_name = "numba" if kernels.HAS_NUMBA else "python loop"
    print(f"selected backend: {kernels.BACKEND}")
    rows = [
        (f"sample {args.seqs} sequences", *bench_sampling(args.seqs, args.repeats)),
        (f"lcs {args.pairs} pairs of {args.length} words", *bench_lcs(args.pairs, args.length, args.repeats)),
    ]
    print(f"{'kernel':<32} {'numpy [s]':>10} {loop_name + ' [s]':>16} {'speedup':>8}")
    for name, t_np, t_loop in rows:
        print(f"{name:<32} {t_np:>10.4f} {t_loop:>16.4f} {t_np / t_loop:>7.1f}x")


if __name__ == "__main__":
    main()
