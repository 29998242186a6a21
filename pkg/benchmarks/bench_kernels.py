"""Compare the jitted kernels against the pure-numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py``; pass ``--sizes`` to change
the problem sizes.  The numpy path is also what you get at runtime with
``CYCLE_DISABLE_NUMBA=1``.
"""

import argparse
import time

import numpy as np

from cycle_el import backend, kernels


def timeit(fn, *args, repeats=5):
    fn(*args)  # warmup (and jit compile)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_knn(n, d, k, rng):
    emb = rng.normal(size=(n, d))
    rows = [("knn_topk numpy", timeit(kernels._knn_topk_numpy, emb, k))]
    if backend.HAVE_NUMBA:
        rows.append(("knn_topk numba", timeit(kernels._knn_topk_numba, emb, k)))
        same = np.array_equal(kernels._knn_topk_numpy(emb, k),
                              kernels._knn_topk_numba(emb, k))
        rows.append(("knn_topk agree", same))
    return rows


def bench_seg(b, s, m, nf, rng):
    w = rng.normal(size=(b, s))
    f = rng.normal(size=(nf, m))
    idx = rng.integers(-1, nf, size=(b, s))
    g = rng.normal(size=(b, m))
    rows = [
        ("seg_sum numpy", timeit(kernels._seg_weighted_sum_numpy, w, f, idx)),
        ("seg_bwd numpy", timeit(kernels._seg_weighted_sum_bwd_numpy, g, w, f, idx, True)),
    ]
    if backend.HAVE_NUMBA:
        rows.append(("seg_sum numba", timeit(kernels._seg_weighted_sum_numba, w, f, idx)))
        rows.append(("seg_bwd numba",
                     timeit(kernels._seg_weighted_sum_bwd_numba, g, w, f, idx, True)))
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", type=int, nargs="+", default=[500, 2000])
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {backend.HAVE_NUMBA}")
    for n in args.sizes:
        print(f"\n-- n={n} --")
        for name, val in bench_knn(n, 64, 10, rng):
            if isinstance(val, bool):
                print(f"  {name}: {val}")
            else:
                print(f"  {name}: {val * 1e3:8.2f} ms")
        for name, val in bench_seg(n, 16, 64, n, rng):
            print(f"  {name}: {val * 1e3:8.2f} ms")


if __name__ == "__main__":
    main()
