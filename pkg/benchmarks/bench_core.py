"""Compare the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_core.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from dckit.backend import IMPLEMENTATIONS


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return np.ascontiguousarray(x / np.linalg.norm(x, axis=1, keepdims=True))


def cases(rng):
    for n, d in [(2000, 64), (10000, 128)]:
        x = unit_rows(rng, n, d)
        yield f"greedy_unique n={n} d={d}", lambda m, x=x: m.greedy_unique(x, 0.3)
    for n, d in [(1000, 32), (3000, 64)]:
        gen = np.ascontiguousarray(rng.normal(size=(n, d)))
        real = np.ascontiguousarray(rng.normal(size=(n, d)))
        radii = IMPLEMENTATIONS["python"].knn_sq_radii(gen, 3)
        yield f"knn_sq_radii n={n} d={d}", lambda m, g=gen: m.knn_sq_radii(g, 3)
        yield f"covered_mask n={n} d={d}", lambda m, r=real, g=gen, s=radii: m.covered_mask(r, g, s)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    names = sorted(IMPLEMENTATIONS)
    print(f"{'kernel':<32}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(np.random.default_rng(0)):
        results = [fn(IMPLEMENTATIONS[n]) for n in names]
        # radii may differ in the last bit (summation order); kept sets and masks must match
        assert all(np.allclose(results[0], r, rtol=1e-12, atol=0) for r in results[1:]), label
        best = [min(timeit.repeat(lambda: fn(IMPLEMENTATIONS[n]), number=1, repeat=args.repeat)) for n in names]
        row = f"{label:<32}" + "".join(f"{t * 1e3:>10.1f}ms" for t in best)
        if len(names) > 1:
            row += f"{best[names.index('python')] / best[names.index('cython')]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
