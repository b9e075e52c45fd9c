"""Intra-class cleaning: per-folder density clustering and cluster retention.

Each identity folder is clustered with DBSCAN on cosine distance
(``1 - similarity``); only the largest cluster survives, and only when it
has at least three faces. Everything here is deterministic: see
``kernels.dbscan_labels`` for the tie-break rules.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from facecurate import kernels
from facecurate.corpus import Corpus, IdentityFolder
from facecurate.stats import StageStats

# A surviving cluster must have more than two faces, independent of min_pts.
RESERVE_MIN_FACES = 3


@dataclass(frozen=True)
class DbscanParams:
    """eps is a cosine *distance* (1 - similarity), in [0, 2]."""

    eps: float
    min_pts: int = 3

    def __post_init__(self) -> None:
        if not 0.0 <= self.eps <= 2.0:
            raise ValueError(f"eps must be in [0, 2], got {self.eps}")
        if self.min_pts < 1:
            raise ValueError(f"min_pts must be >= 1, got {self.min_pts}")


@dataclass(frozen=True)
class ClusterLabeling:
    """Labels aligned with folder member order (ascending face_id);
    -1 marks noise."""

    face_ids: tuple[int, ...]
    labels: np.ndarray

    @property
    def num_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


def dbscan_folder(
    corpus: Corpus, identity_id: int, params: DbscanParams
) -> ClusterLabeling:
    folder = corpus.folders[identity_id]
    mat = corpus.folder_matrix(identity_id)
    sim = kernels.pairwise_similarity(mat, mat)
    labels = kernels.dbscan_labels(sim, params.eps, params.min_pts)
    return ClusterLabeling(face_ids=folder.member_face_ids, labels=labels)


def _cluster_quality(mat64: np.ndarray, member_rows: np.ndarray) -> float:
    """Mean member-to-centroid similarity; the centroid is the renormalized
    mean. Degenerate (zero-mean) clusters score 0."""
    block = mat64[member_rows]
    s = block.sum(axis=0)
    norm = float(np.linalg.norm(s))
    if norm < 1e-12:
        return 0.0
    return float(np.mean(block @ (s / norm)))


def reserve_largest_cluster(
    corpus: Corpus, identity_id: int, labeling: ClusterLabeling
) -> IdentityFolder | None:
    """Keep only the largest cluster, requiring at least three faces.

    Size ties go to the cluster with greater mean member-to-centroid
    similarity, then to the one containing the lowest face_id.
    """
    n_clusters = labeling.num_clusters
    if n_clusters == 0:
        return None
    labels = labeling.labels
    mat64 = None
    best = None
    best_key = None
    for cid in range(n_clusters):
        rows = np.flatnonzero(labels == cid)
        size = rows.size
        if best_key is not None and size < best_key[0]:
            continue
        if mat64 is None:
            mat64 = corpus.folder_matrix(identity_id).astype(np.float64)
        quality = _cluster_quality(mat64, rows)
        min_fid = labeling.face_ids[rows[0]]
        key = (size, quality, -min_fid)
        if best_key is None or key > best_key:
            best_key = key
            best = rows
    assert best is not None
    if best.size < RESERVE_MIN_FACES:
        return None
    kept = tuple(labeling.face_ids[r] for r in best)
    return IdentityFolder(identity_id=identity_id, member_face_ids=kept)


def _clean_one(
    corpus: Corpus, identity_id: int, params: DbscanParams
) -> tuple[int, ...] | None:
    labeling = dbscan_folder(corpus, identity_id, params)
    kept = reserve_largest_cluster(corpus, identity_id, labeling)
    return None if kept is None else kept.member_face_ids


def intra_class_clean(
    corpus: Corpus,
    params: DbscanParams,
    *,
    workers: int = 1,
    stage_name: str = "intra-class",
) -> tuple[Corpus, StageStats]:
    """Clean every folder independently; folders whose largest cluster is
    too small disappear. Output is identical for any worker count."""
    idents = sorted(corpus.folders)
    if workers > 1 and len(idents) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            survivors = list(
                pool.map(lambda ident: _clean_one(corpus, ident, params), idents)
            )
    else:
        survivors = [_clean_one(corpus, ident, params) for ident in idents]
    keep = {
        ident: kept for ident, kept in zip(idents, survivors) if kept is not None
    }
    cleaned = corpus.subset(keep)
    st = StageStats(
        stage=stage_name,
        identities_before=corpus.num_identities,
        identities_after=cleaned.num_identities,
        faces_before=corpus.num_faces,
        faces_after=cleaned.num_faces,
    )
    return cleaned, st
