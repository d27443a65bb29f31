"""Compare the compiled kernels with the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--dims 10,100,201] [--repeat 2000]
"""
from __future__ import annotations

import argparse
import importlib
import timeit

import numpy as np

from posthoc_bandit import _kernels_py


def _inputs(rng, K, dc, dp):
    def spd(d):
        m = rng.standard_normal((d, d))
        return m @ m.T + d * np.eye(d)

    blocks = [np.stack([spd(dc)] * K), np.stack([spd(dp)] * K), spd(dc), spd(dp),
              rng.standard_normal((dc, dp)), np.zeros((K, dc)), np.zeros((K, dp))]
    chol = np.linalg.cholesky(blocks[0])
    return blocks, chol, rng.standard_normal((K, dc)), rng.standard_normal(dc), rng.standard_normal(dp)


def bench(impl, K, dc, dp, repeat):
    rng = np.random.default_rng(0)
    blocks, chol, theta, c, p = _inputs(rng, K, dc, dp)
    out = np.empty(K)
    acc = timeit.timeit(lambda: impl.accumulate(*blocks, c, p, 0.5, 3), number=repeat) / repeat
    scan = timeit.timeit(lambda: impl.lcb_scan(chol, theta, c, 0.1, 2.0, out), number=repeat) / repeat
    return acc, scan


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dims", default="10,100,201")
    parser.add_argument("--K", type=int, default=10)
    parser.add_argument("--d-p", type=int, default=3)
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args(argv)
    try:
        compiled = importlib.import_module("posthoc_bandit._kernels")
    except ImportError:
        print("compiled extension not built; run `pip install -e .` first")
        return 1
    print(f"{'d_c':>5} {'kernel':>11} {'python us':>10} {'cython us':>10} {'speedup':>8}")
    for dc in (int(x) for x in args.dims.split(",")):
        dp = min(args.d_p, dc)
        py = bench(_kernels_py, args.K, dc, dp, args.repeat)
        cy = bench(compiled, args.K, dc, dp, args.repeat)
        for name, a, b in zip(("accumulate", "lcb_scan"), py, cy):
            print(f"{dc:>5} {name:>11} {a * 1e6:>10.1f} {b * 1e6:>10.1f} {a / b:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
