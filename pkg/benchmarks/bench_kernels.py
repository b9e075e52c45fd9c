"""Median wall time per hot kernel, compiled extension vs NumPy fallback.

Runs every workload against both backends (when the extension is built)
and prints one line per kernel with the speedup. Works without the
extension; the compiled column is then skipped.

    python benchmarks/bench_kernels.py [--reps 7] [--scale 1.0]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from facecurate import _kernels_py

try:
    from facecurate import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None


def _sphere(n: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(np.float32)


def _timeit(fn, reps: int) -> float:
    times = []
    for _ in range(max(5, reps)):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def build_workloads(scale: float):
    n_folder = int(200 * scale)
    n_centers = int(2000 * scale)
    n_dedup = int(400 * scale)
    folder = _sphere(n_folder, 512, seed=1)
    sim_folder = np.ascontiguousarray(
        folder.astype(np.float64) @ folder.astype(np.float64).T
    )
    centers = _sphere(n_centers, 512, seed=2)
    dedup_rows = _sphere(n_dedup, 512, seed=3)
    sim_dedup = np.ascontiguousarray(
        dedup_rows.astype(np.float64) @ dedup_rows.astype(np.float64).T
    )
    probes = _sphere(int(1000 * scale), 512, seed=4)
    gallery = _sphere(int(200 * scale), 512, seed=5)
    return [
        (
            f"pairwise_similarity ({n_folder}x512)",
            lambda k: k.pairwise_similarity(folder, folder),
        ),
        (
            f"dbscan_labels ({n_folder} faces)",
            lambda k: k.dbscan_labels(sim_folder, 0.45, 3),
        ),
        (
            f"dedup_keep ({n_dedup} faces)",
            lambda k: k.dedup_keep(sim_dedup, 0.95),
        ),
        (
            f"self_similar_pairs ({n_centers} centers)",
            lambda k: k.self_similar_pairs(centers, 0.5),
        ),
        (
            f"max_cross_similarity ({probes.shape[0]}x{gallery.shape[0]})",
            lambda k: k.max_cross_similarity(probes, gallery),
        ),
    ]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=7)
    parser.add_argument("--scale", type=float, default=1.0)
    args = parser.parse_args()

    workloads = build_workloads(args.scale)
    have_cy = _kernels_cy is not None
    header = f"{'kernel':<44}{'numpy ms':>10}"
    if have_cy:
        header += f"{'cython ms':>11}{'speedup':>9}"
    print(header)
    for name, fn in workloads:
        t_py = _timeit(lambda: fn(_kernels_py), args.reps) * 1000.0
        line = f"{name:<44}{t_py:>10.2f}"
        if have_cy:
            t_cy = _timeit(lambda: fn(_kernels_cy), args.reps) * 1000.0
            line += f"{t_cy:>11.2f}{t_py / t_cy:>9.2f}x"
        print(line)
    if not have_cy:
        print("(compiled extension not built; only the fallback was timed)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
