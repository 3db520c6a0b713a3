"""Timing comparison of the jitted kernels against their numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--sizes 64,256,1024] [--repeats 5]

The jitted path is what ALIGNLITE_NUMBA=1 (the default, when numba is
installed) dispatches to; the numpy path is the portable fallback.
"""

import argparse
import time

import numpy as np

from alignlite import _kernels as K


def _best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _stochastic(rng, n):
    p = rng.uniform(0.0, 1.0, size=(n, n))
    return p / p.sum(axis=1, keepdims=True)


def bench(n, repeats, rng):
    p, q = _stochastic(rng, n), _stochastic(rng, n)
    sims = rng.normal(size=(n, n))
    k = max(1, min(16, n // 4))
    nn_a = np.argsort(rng.normal(size=(n, n)), axis=1)[:, :k].astype(np.int64)
    nn_b = np.argsort(rng.normal(size=(n, n)), axis=1)[:, :k].astype(np.int64)
    ranks = np.empty((n, n), dtype=np.int64)
    for i in range(n):
        ranks[i] = rng.permutation(n)
    cases = [
        ("js_sum", K._js_sum_np, (p, q, 1e-8)),
        ("match_ranks", K._match_ranks_np, (sims,)),
        ("topk_overlap", K._topk_overlap_np, (nn_a, nn_b)),
        ("rank_penalty", K._rank_penalty_np, (ranks, nn_a, k)),
    ]
    rows = []
    for name, np_fn, args in cases:
        t_np = _best_of(np_fn, args, repeats)
        if K.HAS_NUMBA:
            nb_fn = getattr(K, np_fn.__name__.replace("_np", "_nb"))
            nb_fn(*args)  # compile outside the timed region
            t_nb = _best_of(nb_fn, args, repeats)
            rows.append((name, t_np, t_nb, t_np / t_nb))
        else:
            rows.append((name, t_np, None, None))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="64,256,1024",
                    type=lambda s: [int(v) for v in s.split(",")])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"numba available: {K.HAS_NUMBA}   dispatch uses numba: {K.USE_NUMBA}")
    header = f"{'kernel':<14} {'N':>5} {'numpy (ms)':>11} {'numba (ms)':>11} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n in args.sizes:
        for name, t_np, t_nb, speed in bench(n, args.repeats, rng):
            nb_s = f"{t_nb * 1e3:>10.3f}" if t_nb is not None else f"{'-':>10}"
            sp_s = f"{speed:>7.2f}x" if speed is not None else f"{'-':>8}"
            print(f"{name:<14} {n:>5} {t_np * 1e3:>10.3f} {nb_s} {sp_s}")


if __name__ == "__main__":
    main()
