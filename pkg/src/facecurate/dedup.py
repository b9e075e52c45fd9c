"""Duplicate suppression and benchmark-overlap removal.

Both run once, after the iterative cleaning loop: near-identical faces
within a folder are removed greedily, and whole folders whose center sits
too close to an exclusion set (benchmark identities) are dropped.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from facecurate import kernels
from facecurate.corpus import Corpus
from facecurate.merge import CenterIndex, compute_centers
from facecurate.errors import DimensionError
from facecurate.stats import StageStats

DUPLICATE_THRESHOLD = 0.95
OVERLAP_THRESHOLD = 0.7


def _dedup_one(corpus: Corpus, identity_id: int, threshold: float) -> tuple[int, ...]:
    folder = corpus.folders[identity_id]
    if folder.size < 2:
        return folder.member_face_ids
    mat = corpus.folder_matrix(identity_id)
    sim = kernels.pairwise_similarity(mat, mat)
    keep = kernels.dedup_keep(sim, threshold)
    return tuple(
        fid for fid, k in zip(folder.member_face_ids, keep) if k
    )


def remove_duplicates(
    corpus: Corpus,
    threshold: float = DUPLICATE_THRESHOLD,
    *,
    workers: int = 1,
) -> tuple[Corpus, StageStats]:
    """Within each folder, drop the higher-face_id member of every pair with
    similarity strictly above the threshold (descending-similarity greedy).

    The lowest face_id of a folder is never the dropped side, so no folder
    is emptied by this stage.
    """
    idents = sorted(corpus.folders)
    if workers > 1 and len(idents) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            kept = list(
                pool.map(lambda ident: _dedup_one(corpus, ident, threshold), idents)
            )
    else:
        kept = [_dedup_one(corpus, ident, threshold) for ident in idents]
    cleaned = corpus.subset(dict(zip(idents, kept)))
    st = StageStats(
        stage="dedup",
        identities_before=corpus.num_identities,
        identities_after=cleaned.num_identities,
        faces_before=corpus.num_faces,
        faces_after=cleaned.num_faces,
    )
    return cleaned, st


def remove_test_overlap(
    corpus: Corpus,
    exclusion: CenterIndex,
    threshold: float = OVERLAP_THRESHOLD,
) -> tuple[Corpus, StageStats]:
    """Drop every folder whose center similarity to any exclusion center is
    strictly above the threshold.

    Folder centers are recomputed here, on the corpus as passed in.
    """
    if corpus.num_identities and corpus.dim != exclusion.dim:
        raise DimensionError(
            f"corpus dim {corpus.dim} does not match exclusion dim {exclusion.dim}"
        )
    centers = compute_centers(corpus)
    closest = kernels.max_cross_similarity(centers.centers, exclusion.centers)
    overlapping = set(
        int(ident) for ident in centers.identity_ids[closest > threshold]
    )
    keep = {
        ident: corpus.folders[ident].member_face_ids
        for ident in sorted(corpus.folders)
        if ident not in overlapping
    }
    cleaned = corpus.subset(keep)
    st = StageStats(
        stage="overlap",
        identities_before=corpus.num_identities,
        identities_after=cleaned.num_identities,
        faces_before=corpus.num_faces,
        faces_after=cleaned.num_faces,
    )
    return cleaned, st
