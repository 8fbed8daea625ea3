"""Compare the numba and pure-numpy SMO paths on the same problems.

    python3 benchmarks/bench_kernels.py [--sizes 500 1000 2000] [--repeat 3]

Both paths take identical steps, so the script also checks that they return
the same multipliers.  Numba compile time is excluded by a warm-up solve.
"""

import argparse
import time

import numpy as np

from gmeml import _accel, svm


def problem(n: int, d: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.where(X[:, 0] * X[:, 1] + 0.3 * rng.normal(size=n) > 0, 1, -1)
    return X, y


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def kernel_rows(X, gamma, rows, use_numba):
    sq = np.einsum("ij,ij->i", X, X)
    out = np.empty(len(X))
    for i in rows:
        if use_numba:
            svm._kernel_row_nb(X, sq, i, gamma, False, out)
        else:
            d2 = np.maximum(sq[i] + sq - 2.0 * (X @ X[i]), 0.0)
            out = np.exp(-gamma * d2)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2000])
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--C", type=float, default=10.0)
    ap.add_argument("--gamma", type=float, default=0.05)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is unavailable (or GMEML_DISABLE_NUMBA is set); nothing to compare")

    X, y = problem(50, args.dim, 0)
    _accel.USE_NUMBA = True
    svm.smo(X, y, args.C, args.gamma)
    kernel_rows(X, args.gamma, [0], True)

    print(f"{'task':<14}{'n':>7}{'numba s':>11}{'numpy s':>11}{'speedup':>9}  same")
    for n in args.sizes:
        X, y = problem(n, args.dim, n)
        timings = {}
        for flag in (True, False):
            _accel.USE_NUMBA = flag
            timings[flag] = best_of(lambda: svm.smo(X, y, args.C, args.gamma), args.repeat)
        same = np.allclose(timings[True][1].alpha, timings[False][1].alpha, atol=1e-10)
        print(f"{'smo':<14}{n:>7}{timings[True][0]:>11.3f}{timings[False][0]:>11.3f}{timings[False][0] / timings[True][0]:>9.1f}  {same}")

        rows = range(min(n, 200))
        tn = best_of(lambda: kernel_rows(X, args.gamma, rows, True), args.repeat)
        tp = best_of(lambda: kernel_rows(X, args.gamma, rows, False), args.repeat)
        same = np.allclose(tn[1], tp[1], atol=1e-12)
        print(f"{'kernel rows':<14}{n:>7}{tn[0]:>11.3f}{tp[0]:>11.3f}{tp[0] / tn[0]:>9.1f}  {same}")
    _accel.USE_NUMBA = _accel.HAVE_NUMBA


if __name__ == "__main__":
    main()
