"""Timing comparison of the pure-python and compiled kernel backends.

Runs every hot kernel on synthetic workloads with both backends and
prints a table of best-of-``--repeat`` wall times plus the speedup of
the compiled extension over the numpy implementation.  Exits nonzero
if the compiled backend is unavailable unless ``--allow-pure-only``
is given (the table then has a single timing column).

Usage:
    python benchmarks/bench_kernels.py [--n 20000] [--repeat 5]
"""

import argparse
import sys
import time

import numpy as np

from rmstmediate import _core_py

try:
    from rmstmediate import _core_cy
except ImportError:
    _core_cy = None


CUTS = np.array([0.0, 2.0, 5.0])
LEVELS0 = np.array([0.06, 0.09, 0.07])
LEVELS1 = np.array([0.05, 0.08, 0.06])
T_MAX = 15.0


def trajectory_workload(rng, n):
    """Shared-break cubic trajectory panels with tempered curvature."""
    breaks = np.array([0.0, 0.75, 1.5, 2.25, 3.0])
    coefs = rng.normal(scale=0.4, size=(n, 4, 4))
    coefs *= np.array([1.0, 1.0, 0.3, 0.1])  # keep exp(zg * dm) bounded
    eta0 = rng.normal(scale=0.4, size=n) - 1.5
    zg = rng.normal(scale=0.3, size=n)
    return breaks, coefs, eta0, zg


def build_cases(n, rng):
    t_dense = rng.uniform(0.0, T_MAX, size=n)
    eta = rng.normal(scale=0.5, size=n)
    e_exp = rng.exponential(size=n)
    arm = rng.integers(0, 2, size=n)
    event = rng.integers(0, 2, size=n)
    breaks, coefs, eta0, zg = trajectory_workload(rng, max(64, n // 32))
    multi = rng.normal(scale=0.5, size=(12, 4, 4))

    cases = [
        ("ppoly_eval", lambda m: m.ppoly_eval(breaks, coefs[0], t_dense)),
        ("ppoly_eval_multi", lambda m: m.ppoly_eval_multi(breaks, multi, t_dense)),
        ("pc_cumhaz", lambda m: m.pc_cumhaz(CUTS, LEVELS0, t_dense)),
        ("pc_rmst", lambda m: m.pc_rmst(CUTS, LEVELS0, eta, T_MAX)),
        ("pc_invert", lambda m: m.pc_invert(CUTS, LEVELS0, eta, e_exp, T_MAX)),
        (
            "pc_loglik",
            lambda m: m.pc_loglik(CUTS, LEVELS0, LEVELS1, arm, eta, t_dense, event),
        ),
        (
            "cc_cumhaz x64",
            lambda m: [
                m.cc_cumhaz(CUTS, LEVELS0, eta0[i], zg[i], breaks, coefs[i], 9.5)
                for i in range(64)
            ],
        ),
        (
            "cc_rmst_batch",
            lambda m: m.cc_rmst_batch(
                CUTS, LEVELS0, eta0, zg, breaks, coefs, T_MAX
            ),
        ),
        (
            "cc_invert_batch",
            lambda m: m.cc_invert_batch(
                CUTS, LEVELS0, eta0, zg, breaks, coefs, e_exp[: len(eta0)], T_MAX
            ),
        ),
    ]
    return cases


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=20000, help="batch size for array kernels")
    parser.add_argument("--repeat", type=int, default=5, help="timing repeats (best is kept)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--allow-pure-only",
        action="store_true",
        help="do not fail when the compiled extension is missing",
    )
    args = parser.parse_args(argv)
    if args.n < 64 or args.repeat < 1:
        parser.error("--n must be >= 64 and --repeat >= 1")

    if _core_cy is None and not args.allow_pure_only:
        print("compiled backend not importable; rebuild or pass --allow-pure-only")
        return 1

    rng = np.random.default_rng(args.seed)
    cases = build_cases(args.n, rng)
    backends = [("pure", _core_py)] + ([("compiled", _core_cy)] if _core_cy else [])

    # warm-up pass so allocation and caching effects drop out of the timings
    for _, mod in backends:
        for _, fn in cases:
            fn(mod)

    print(f"batch size {args.n}, best of {args.repeat} runs, times in ms")
    header = f"{'kernel':<18}" + "".join(f"{name:>12}" for name, _ in backends)
    if _core_cy:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, fn in cases:
        times = [best_time(lambda m=mod: fn(m), args.repeat) for _, mod in backends]
        row = f"{name:<18}" + "".join(f"{1e3 * t:>12.3f}" for t in times)
        if _core_cy:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
