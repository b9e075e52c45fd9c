"""Kernel backend selection.

The compiled extension carries the scan-and-propagate kernels
(``dbscan_labels``, ``dedup_keep``), which are loop-bound and gain 5-25x
over the NumPy fallback. The matmul-bound kernels always use the NumPy
implementations, which run on BLAS and beat hand-written C loops by an
order of magnitude (see ``benchmarks/bench_kernels.py``).

Set ``FACECURATE_KERNELS=python`` or ``=cython`` to force a backend for
the loop-bound kernels (the latter fails loudly if the extension is
missing). Both backends share the contracts documented in
``_kernels_py`` and produce identical outputs.
"""

from __future__ import annotations

import os

import numpy as np

from facecurate import _kernels_py

_FORCED = os.environ.get("FACECURATE_KERNELS", "").strip().lower()

if _FORCED == "python":
    _impl = _kernels_py
    BACKEND = "python"
elif _FORCED == "cython":
    from facecurate import _kernels as _impl  # type: ignore[no-redef]

    BACKEND = "cython"
elif _FORCED:
    raise RuntimeError(
        f"FACECURATE_KERNELS must be 'python' or 'cython', got {_FORCED!r}"
    )
else:
    try:
        from facecurate import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


SCAN_BLOCK = _kernels_py.SCAN_BLOCK


def _f32(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float32)


def _f64sq(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def pairwise_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _kernels_py.pairwise_similarity(_f32(a), _f32(b))


def dbscan_labels(sim: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    return _impl.dbscan_labels(_f64sq(sim), float(eps), int(min_pts))


def dedup_keep(sim: np.ndarray, threshold: float) -> np.ndarray:
    return _impl.dedup_keep(_f64sq(sim), float(threshold))


def self_similar_pairs(
    x: np.ndarray, threshold: float, row_stop: int = -1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _kernels_py.self_similar_pairs(_f32(x), float(threshold), int(row_stop))


def max_cross_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _kernels_py.max_cross_similarity(_f32(a), _f32(b))
