"""Timing of the compiled and numpy local-moment kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from pleass import backend


def cases(rng):
    for N in (1_000, 10_000, 50_000):
        x = np.sort(rng.uniform(0, 1, N))
        mult, u = np.ones(N), rng.normal(size=N)
        q = np.linspace(0, 1, 51)
        yield f"1d  N={N:>6} Q=51", "moments_1d", (q, x, mult, u, 0.1, 1, 0.75)
    for N in (1_000, 10_000):
        a = np.sort(rng.uniform(0, 1, N))
        b = rng.uniform(0, 1, N)
        qs, qt = (g.ravel() for g in np.meshgrid(np.linspace(0, 1, 51), np.linspace(0, 1, 51)))
        yield f"2d  N={N:>6} Q=2601", "moments_2d", (qs, qt, a, b, np.ones(N), rng.normal(size=N), 0.1, 1, 0.75)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    names = backend.available()
    print(f"backends: {', '.join(names)}")
    print(f"{'case':<22}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for label, fn, inputs in cases(np.random.default_rng(0)):
        times = []
        for n in names:
            f = getattr(backend.get(n), fn)
            times.append(min(timeit.repeat(lambda: f(*inputs), number=1, repeat=args.repeat)))
        line = f"{label:<22}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[1] / times[0]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
