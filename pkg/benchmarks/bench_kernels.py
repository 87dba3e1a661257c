"""Compare the numba kernels with their pure-numpy counterparts.

Run: python3 benchmarks/bench_kernels.py [--repeat N]

Both paths are called directly (``*_nb`` and ``*_np``), so the environment
flag does not matter here. Outputs are checked for equality before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from molfields import kernels


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    atoms = rng.normal(size=(40, 3)) * 3
    points = rng.normal(size=(20000, 3)) * 4
    cloud = np.concatenate([a + 0.02 * rng.normal(size=(100, 3)) for a in atoms])
    values = rng.normal(size=(4096, 64))
    index = rng.integers(0, 64, 4096)
    return [
        ("nearest 20000x40", lambda f: f(points, atoms), "nearest"),
        ("pairwise 1500", lambda f: f(points[:1500]), "pairwise"),
        ("greedy_cluster 4000", lambda f: f(cloud, 0.3), "greedy_cluster"),
        ("segment_mean 4096x64/64", lambda f: f(values, index, 64), "segment_mean"),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, call, name in cases(rng):
        f_np = getattr(kernels, f"{name}_np")
        f_nb = getattr(kernels, f"{name}_nb")
        a, b = call(f_np), call(f_nb)  # also compiles the numba version
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)
        t_np = _best_of(lambda: call(f_np), args.repeat)
        t_nb = _best_of(lambda: call(f_nb), args.repeat)
        print(f"{label:28s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
