"""Timing comparison of the compiled kernels against their pure-numpy
fallbacks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats N]

Needs SIGNTOK_NUMBA unset (or truthy): each dispatcher is timed both as
compiled code and through its captured .py_func, which is exactly the
code the fallback path runs when SIGNTOK_NUMBA=0.
"""

import argparse
import time

import numpy as np

from signtok import kernels


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_cases(rng):
    """(name, size label, argument tuple) for every jitted kernel."""
    cases = []

    X = rng.standard_normal((512, 16))
    rows = rng.standard_normal((256, 16))
    cases.append(("nearest_rows", "512x16 vs 256 rows", (X, rows)))

    T, D, H = 256, 32, 32
    x = rng.standard_normal((T, D))
    h0 = np.zeros(H)
    mats = [rng.standard_normal((H, D)) * 0.1 for _ in range(3)]
    recs = [rng.standard_normal((H, H)) * 0.1 for _ in range(3)]
    biases = [np.zeros(H) for _ in range(3)]
    fwd_args = (x, h0, *mats, *recs, *biases)
    cases.append(("gru_forward", f"T={T}, dim={H}", fwd_args))

    h, r, u, n = kernels.gru_forward(*fwd_args)
    dh = rng.standard_normal((T, H))
    cases.append(
        ("gru_backward", f"T={T}, dim={H}", (x, h0, h, r, u, n, *mats, *recs, dh))
    )

    a = rng.integers(0, 24, size=512).astype(np.int64)
    b = rng.integers(0, 24, size=512).astype(np.int64)
    cases.append(("lcs_length", "512 vs 512", (a, b)))

    P = rng.standard_normal((256, 16))
    Q = rng.standard_normal((256, 16))
    cases.append(("pairwise_sq_dists", "256x256, dim 16", (P, Q)))
    return cases


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats; the best run is reported")
    args = parser.parse_args()

    if not kernels.NUMBA_ENABLED:
        raise SystemExit(
            "kernels were imported in fallback mode; unset SIGNTOK_NUMBA "
            "to benchmark the compiled path against it"
        )

    rng = np.random.default_rng(0)
    cases = build_cases(rng)

    print(f"{'kernel':<20} {'size':<22} {'pure ms':>10} {'jit ms':>10} {'speedup':>9}")
    for name, size, call_args in cases:
        compiled = getattr(kernels, name)
        pure = compiled.py_func
        compiled(*call_args)  # pay the compile before timing
        t_jit = _best_of(lambda: compiled(*call_args), args.repeats)
        t_pure = _best_of(lambda: pure(*call_args), args.repeats)
        print(
            f"{name:<20} {size:<22} {t_pure * 1e3:>10.3f} {t_jit * 1e3:>10.3f}"
            f" {t_pure / t_jit:>8.1f}x"
        )


if __name__ == "__main__":
    main()
