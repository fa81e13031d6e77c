"""Time the compiled kernels against their pure-Python versions.

    python3 benchmarks/bench_kernels.py [--sizes 2049,8193] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from sharpflow import _pykernels, kernels
from sharpflow.coefficients import parse_config
from sharpflow.mode_solver import solve_mode
from sharpflow.symbols import FRACTIONAL_CONFIG


def _inputs(n, rng):
    h = np.full(n - 1, 2.0 / (n - 1))
    k = rng.uniform(1.0, 1e6, n - 1)
    mdiag = np.zeros(n)
    mdiag[:-1] += h / 3
    mdiag[1:] += h / 3
    return k, mdiag, h / 6, rng.normal(size=n), rng.uniform(0, 1, n), rng.normal(size=n)


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--sizes", default="2049,8193,32769")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    print(f"compiled backend: {kernels.BACKEND}")
    print(f"{'kernel':<12}{'n':>8}{'compiled ms':>14}{'python ms':>12}{'speedup':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        k, md, mo, rhs, dec, inc = _inputs(n, rng)
        for name, fast, slow in [
            ("tridiag", lambda: kernels.tridiag_stiff_mass_solve(k, md, mo, rhs),
             lambda: _pykernels.tridiag_stiff_mass_solve(k, md, mo, rhs)),
            ("scan", lambda: kernels.decay_scan(dec, inc), lambda: _pykernels.decay_scan(dec, inc)),
        ]:
            tf, ts = best(fast, args.repeat), best(slow, args.repeat)
            print(f"{name:<12}{n:>8}{tf * 1e3:>14.3f}{ts * 1e3:>12.3f}{ts / tf:>10.1f}")
    coeffs = parse_config(FRACTIONAL_CONFIG)
    t = best(lambda: solve_mode(coeffs, 100.0, n_cells=2048), args.repeat)
    print(f"full mode solve, N=2048: {t * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
