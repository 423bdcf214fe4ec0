"""Timing comparison of the compiled kernels against the numpy fallback.

Run:  python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from specguard._kernels import BACKEND, pyfallback
from specguard.numerics import Rng

try:
    from specguard._kernels import _cykernels
except ImportError:
    _cykernels = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(name, make_args, py_fn, cy_fn, repeats):
    args = make_args()
    t_py = timeit(lambda: py_fn(*args), repeats)
    if cy_fn is None:
        print(f"{name:38s} python {t_py * 1e6:9.1f} us   (no compiled kernel)")
        return
    t_cy = timeit(lambda: cy_fn(*args), repeats)
    print(f"{name:38s} python {t_py * 1e6:9.1f} us   cython {t_cy * 1e6:9.1f} us"
          f"   speedup {t_py / t_cy:5.1f}x")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args()
    rng = Rng(0)
    print(f"selected backend: {BACKEND}")

    cases = [
        ("conv2d 1x1x8x8 k3 s1",
         lambda: (rng.gaussian((1, 8, 8)), rng.gaussian((1, 1, 3, 3)), 1)),
        ("conv2d 3x3x28x28 k3 s1",
         lambda: (rng.gaussian((3, 28, 28)), rng.gaussian((3, 3, 3, 3)), 1)),
        ("conv2d 8x8x32x32 k3 s2",
         lambda: (rng.gaussian((8, 32, 32)), rng.gaussian((8, 8, 3, 3)), 2)),
    ]
    for name, make in cases:
        bench(name, make, pyfallback.conv2d_periodic,
              _cykernels.conv2d_periodic if _cykernels else None, args.repeats)

    def adj_args():
        K = rng.gaussian((4, 4, 3, 3))
        g = rng.gaussian((4, 16, 16))
        return (g, K, 1, 16, 16)

    bench("conv2d adjoint 4x4x16x16 k3", adj_args,
          pyfallback.conv2d_periodic_adjoint,
          _cykernels.conv2d_periodic_adjoint if _cykernels else None,
          args.repeats)

    def corr_args():
        u = rng.gaussian((4, 16, 16))
        v = rng.gaussian((4, 16, 16))
        return (u, v, 3, 3, 1)

    bench("kernel corr 4ch 16x16 k3", corr_args,
          pyfallback.conv_kernel_corr,
          _cykernels.conv_kernel_corr if _cykernels else None, args.repeats)

    for n in (1024, 262144):
        bench(f"gelu {n}",
              lambda n=n: (rng.gaussian((n,)),),
              pyfallback.gelu, _cykernels.gelu if _cykernels else None,
              args.repeats)


if __name__ == "__main__":
    main()
