"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from hiercop import _pykernels

try:
    from hiercop import _core
except ImportError:
    _core = None


def cases(rng):
    n = 200_000
    h = rng.standard_normal(n)
    k = rng.standard_normal(n)
    u = rng.uniform(size=3000)
    v = rng.uniform(size=3000)
    sizes = np.full(100, 20, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    vals = rng.uniform(size=int(sizes.sum()))
    return {
        f"bvn_cdf (n={n})": lambda m: m.bvn_cdf(h, k, 0.6),
        "kendall_rowsums (n=3000)": lambda m: m.kendall_rowsums(u, v),
        "exch_pair_sums (100 x 20)": lambda m: m.exch_pair_sums(vals, starts, sizes),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':30s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        tp = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _core is None:
            print(f"{name:30s} {tp:12.2f} {'n/a':>12s} {'n/a':>8s}")
            continue
        np.testing.assert_allclose(np.asarray(fn(_core)), np.asarray(fn(_pykernels)), rtol=1e-12, atol=1e-12)
        tc = min(timeit.repeat(lambda: fn(_core), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:30s} {tp:12.2f} {tc:12.2f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
