"""Compare the compiled and pure-Python matmul backends.

Run with ``python3 benchmarks/bench_kernels.py``.  Prints GFLOP/s per shape
and checks the two backends agree bit for bit.
"""
import argparse
import time

import numpy as np

from lattice_rnn import _fallback

try:
    from lattice_rnn import _kernels
except ImportError:
    _kernels = None

# gate projections at desk scale (m x m times m x B) and the readout
SHAPES = [(64, 64, 1), (87, 87, 32), (133, 133, 32), (74, 133, 32), (256, 256, 250)]


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'shape':>16s} {'python GF/s':>12s} {'compiled GF/s':>14s} {'speedup':>8s} identical")
    for p, q, r in SHAPES:
        a, b = rng.standard_normal((p, q)), rng.standard_normal((q, r))
        flops = 2.0 * p * q * r
        tp = best_time(lambda: _fallback.matmul(a, b), args.repeat)
        line = f"{f'{p}x{q}x{r}':>16s} {flops / tp / 1e9:12.2f}"
        if _kernels is None:
            print(line + f" {'(not built)':>14s}")
            continue
        tc = best_time(lambda: _kernels.matmul(a, b), args.repeat)
        same = np.array_equal(_fallback.matmul(a, b), _kernels.matmul(a, b))
        print(line + f" {flops / tc / 1e9:14.2f} {tp / tc:8.1f} {same}")


if __name__ == "__main__":
    main()
