"""Time the numba and numpy kernels on reference-sized inputs.

    python benchmarks/bench_kernels.py [--samples 100000] [--repeat 5]

Also checks that both backends return the same sums.
"""
import argparse
import timeit

import numpy as np

from sbidma import kernels
from sbidma._accel import HAVE_NUMBA
from sbidma.de_engine import poisson_cdf_table
from sbidma.dt_oracle import chi2_differences, dt_threshold, segment_tables


def inputs(samples, seed=0):
    rng = np.random.default_rng(seed)
    m, n0 = 79, 50
    U = rng.random((m, samples))
    S = chi2_differences(rng, n0, (m, samples))
    cdf = poisson_cdf_table(13.6 * 0.4)
    C, D = segment_tables(20.0, n0, len(cdf) - 1)
    prefix = np.zeros((m + 1, samples))
    np.cumsum(S, axis=0, out=prefix[1:])
    g = np.sort(rng.integers(0, 8, m))
    return dict(U=U, S=S, cdf=cdf, C=C, D=D, prefix=prefix, g=g, tau=dt_threshold(100))


CASES = {
    "crn (DE step)": lambda x, b: kernels.crn_dt_sums(x["U"], x["S"], x["cdf"], x["C"], x["D"], x["tau"], backend=b),
    "fixed (phi_dt)": lambda x, b: kernels.fixed_dt_sums(x["g"], x["S"], x["C"], x["D"], x["tau"], backend=b),
    "runs (oracle)": lambda x, b: kernels.runs_dt_sums(x["prefix"], x["g"], x["C"], x["D"], x["tau"], backend=b),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    x = inputs(args.samples)
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    print(f"samples={args.samples}, segments=79, best of {args.repeat}")
    print(f"{'kernel':<16}" + "".join(f"{b + ' [ms]':>14}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for name, fn in CASES.items():
        times, results = [], []
        for b in backends:
            results.append(fn(x, b))  # also triggers compilation
            times.append(min(timeit.repeat(lambda: fn(x, b), number=1, repeat=args.repeat)) * 1e3)
        line = f"{name:<16}" + "".join(f"{t:>14.2f}" for t in times)
        if len(backends) > 1:
            np.testing.assert_allclose(results[0], results[1], rtol=1e-12)
            line += f"{times[0] / times[1]:>9.1f}x"
        print(line)
    if not HAVE_NUMBA:
        print("numba not installed: only the numpy backend was timed")


if __name__ == "__main__":
    main()
