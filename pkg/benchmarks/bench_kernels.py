"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from datk import _fallback, kernels


def _cases(rng):
    x = rng.standard_normal((64, 16, 16, 16))
    cols = _fallback.im2col3x3(x, 1)
    img = rng.standard_normal((192, 16, 16))
    return {
        "im2col3x3 [64,16,16,16]": lambda m: m.im2col3x3(x, 1),
        "col2im3x3 [64,16,16,16]": lambda m: m.col2im3x3(cols, 16, 16, 16, 1),
        "dft2_direct [192,16,16]": lambda m: m.dft2_direct(img),
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled extension not available; only the fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'fallback ms':>12s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, fn in _cases(rng).items():
        slow = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if kernels.BACKEND == "cython":
            fast = min(timeit.repeat(lambda: fn(kernels), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:28s} {slow:12.3f} {fast:12.3f} {slow / fast:8.1f}x")
        else:
            print(f"{name:28s} {slow:12.3f} {'-':>12s} {'-':>8s}")


if __name__ == "__main__":
    main()
