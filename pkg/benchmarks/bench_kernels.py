"""Benchmark the compiled kernel core against the NumPy reference backend.

Run:  python benchmarks/bench_kernels.py
Sizes mirror real workloads: chamfer nearest-neighbor on extracted-mask
point sets, and frame rasterization at clip resolution.
"""

import time

import numpy as np

from physmaster.kernels import BACKEND, _impl, reference


def timeit(fn, *args, repeat=50):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"selected backend: {BACKEND}")
    if BACKEND != "compiled":
        print("compiled extension not available; benchmarking reference only")

    rows = []
    for n, m in [(100, 100), (400, 400), (1500, 1500)]:
        pts = rng.random((n, 2))
        tgt = rng.random((m, 2))
        t_ref = timeit(reference.nearest_dists, pts, tgt)
        if BACKEND == "compiled":
            t_fast = timeit(_impl.nearest_dists, pts, tgt)
            same = np.array_equal(
                _impl.nearest_dists(pts, tgt), reference.nearest_dists(pts, tgt)
            )
        else:
            t_fast, same = float("nan"), True
        rows.append((f"nearest_dists {n}x{m}", t_ref, t_fast, same))

    for h, w in [(64, 64), (256, 256)]:
        args = (h, w, 0.5, 0.5, 0.2)
        t_ref = timeit(reference.rasterize_circle, *args)
        if BACKEND == "compiled":
            t_fast = timeit(_impl.rasterize_circle, *args)
            same = np.array_equal(
                _impl.rasterize_circle(*args), reference.rasterize_circle(*args)
            )
        else:
            t_fast, same = float("nan"), True
        rows.append((f"rasterize_circle {h}x{w}", t_ref, t_fast, same))

    print(f"{'kernel':28s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}  bit-identical")
    for name, t_ref, t_fast, same in rows:
        speed = t_ref / t_fast if t_fast == t_fast else float("nan")
        print(f"{name:28s} {t_ref * 1e6:9.1f}us {t_fast * 1e6:9.1f}us {speed:7.2f}x  {same}")


if __name__ == "__main__":
    main()
