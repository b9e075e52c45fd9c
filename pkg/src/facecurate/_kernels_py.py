"""NumPy implementations of the hot kernels.

Reference backend; the compiled extension in ``_kernels.pyx`` implements the
same contracts. All similarity accumulation happens in float64.
"""

from __future__ import annotations

import numpy as np

# Row-block size of the self-scan. Callers sharding the scan must cut on
# multiples of this so the matmul shapes (hence result bits) never depend
# on how the work is split.
SCAN_BLOCK = 1024


def pairwise_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(m, n) float64 dot-product matrix of two float32 row blocks."""
    return a.astype(np.float64) @ b.astype(np.float64).T


def dbscan_labels(sim: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Deterministic DBSCAN labels from a precomputed similarity matrix.

    Distance is ``1 - sim``; the eps-neighborhood is inclusive
    (``sim >= 1 - eps``) and always contains the point itself. Core points
    have at least ``min_pts`` neighbors. Clusters are connected components
    of core points, numbered by the first core point in index order; border
    points go to the cluster of their lowest-index core neighbor; noise
    gets label -1.
    """
    m = sim.shape[0]
    labels = np.full(m, -1, dtype=np.int64)
    if m == 0:
        return labels
    thr = 1.0 - eps
    adj = sim >= thr
    np.fill_diagonal(adj, True)
    core = adj.sum(axis=1) >= min_pts
    cid = 0
    for i in range(m):
        if core[i] and labels[i] == -1:
            labels[i] = cid
            stack = [i]
            while stack:
                p = stack.pop()
                for q in np.flatnonzero(adj[p]):
                    if core[q] and labels[q] == -1:
                        labels[q] = cid
                        stack.append(int(q))
            cid += 1
    for i in range(m):
        if not core[i]:
            claimants = np.flatnonzero(adj[i] & core)
            if claimants.size:
                labels[i] = labels[claimants[0]]
    return labels


def dedup_keep(sim: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy within-folder duplicate suppression.

    Pairs with similarity strictly above the threshold are processed in
    descending similarity (ties: ascending index pair); the higher-index
    member of a pair that is still fully alive is dropped. Index order is
    ascending face_id by construction, so index 0 always survives.
    """
    m = sim.shape[0]
    keep = np.ones(m, dtype=bool)
    if m < 2:
        return keep
    iu, ju = np.triu_indices(m, k=1)
    s = sim[iu, ju]
    viol = s > threshold
    if not viol.any():
        return keep
    iu, ju, s = iu[viol], ju[viol], s[viol]
    for k in np.lexsort((ju, iu, -s)):
        i, j = iu[k], ju[k]
        if keep[i] and keep[j]:
            keep[j] = False
    return keep


def self_similar_pairs(
    x: np.ndarray, threshold: float, row_stop: int = -1, block: int = SCAN_BLOCK
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Upper-triangle pairs (i < j) with similarity strictly above threshold.

    Returned in row-major scan order. With ``row_stop >= 0`` only pairs whose
    first index is below ``row_stop`` are emitted, which lets callers shard
    the scan over row blocks.
    """
    n = x.shape[0]
    stop = n if row_stop < 0 else min(row_stop, n)
    x64 = x.astype(np.float64)
    ii: list[np.ndarray] = []
    jj: list[np.ndarray] = []
    ss: list[np.ndarray] = []
    for r0 in range(0, stop, block):
        r1 = min(r0 + block, stop)
        g = x64[r0:r1] @ x64[r0:].T
        mask = g > threshold
        # keep only j > i within the leading square of the block
        br = r1 - r0
        mask[:, :br] &= ~np.tri(br, br, k=0, dtype=bool)
        a, b = np.nonzero(mask)
        if a.size:
            ii.append((a + r0).astype(np.int64))
            jj.append((b + r0).astype(np.int64))
            ss.append(g[mask])
    if not ii:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), np.empty(0, dtype=np.float64)
    return np.concatenate(ii), np.concatenate(jj), np.concatenate(ss)


def max_cross_similarity(
    a: np.ndarray, b: np.ndarray, block: int = 2048
) -> np.ndarray:
    """Per-row maximum similarity of rows of ``a`` against all rows of ``b``."""
    m = a.shape[0]
    out = np.full(m, -np.inf, dtype=np.float64)
    if m == 0 or b.shape[0] == 0:
        return out
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    for r0 in range(0, m, block):
        r1 = min(r0 + block, m)
        for c0 in range(0, b.shape[0], block):
            g = a64[r0:r1] @ b64[c0 : c0 + block].T
            np.maximum(out[r0:r1], g.max(axis=1), out=out[r0:r1])
    return out
