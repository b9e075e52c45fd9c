from __future__ import annotations

import numpy as np

from facecurate.corpus import AttributeSet, Corpus, EmbeddingStore, FaceRecord


def unit(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    return (arr / np.linalg.norm(arr)).astype(np.float32)


def sphere_points(n: int, dim: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(np.float32)


def build_corpus(groups: dict[int, list], attrs: dict[int, AttributeSet] | None = None) -> Corpus:
    """Corpus from {identity_id: [vector, ...]}; face ids run 0, 1, 2, ...
    across identities in ascending identity order."""
    records = []
    rows = []
    fid = 0
    for ident in sorted(groups):
        for vec in groups[ident]:
            a = (attrs or {}).get(fid, AttributeSet())
            records.append(FaceRecord(fid, ident, len(rows), a))
            rows.append(unit(vec))
            fid += 1
    return Corpus.build(records, EmbeddingStore(np.stack(rows)))
