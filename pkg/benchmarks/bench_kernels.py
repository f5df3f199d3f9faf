"""Time the numba kernels against the numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from paneleval import _kernels


def cases(rng):
    cube = rng.normal(size=(6, 2000, 10))
    values = rng.normal(size=(20000, 6))
    codes = rng.integers(0, 2000, 20000)
    t = rng.random(2000)
    c = rng.random(20000)
    rank = np.argsort(np.argsort(rng.random(20000)))
    sample = rng.normal(size=5000)
    grid = np.linspace(-4, 4, 512)
    return {
        "demean_twoway 6x2000x10": lambda m: m.demean_twoway(cube),
        "group_demean 20000x6": lambda m: m.group_demean(values, codes, 2000),
        "nearest k=1 2000 vs 20000": lambda m: m.nearest_with_replacement(t, c, rank, 1),
        "nearest no-repl 2000 vs 20000": lambda m: m.nearest_without_replacement(t, c, rank, 1),
        "kde 5000 on 512": lambda m: m.kde(sample, grid, 0.2, _kernels.KERNEL_GAUSSIAN),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _kernels.numba_impl is None:
        raise SystemExit("numba is not installed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<32}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in cases(rng).items():
        fn(_kernels.numba_impl)  # compile
        t_np = min(timeit.repeat(lambda: fn(_kernels.numpy_impl), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fn(_kernels.numba_impl), number=1, repeat=args.repeat))
        print(f"{name:<32}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
