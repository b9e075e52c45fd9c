"""Inter-class cleaning: folder centers, merge/delete planning, application.

Folder pairs with center similarity strictly above the merge threshold are
merged; pairs in the band (delete_low, merge_threshold] lose the folder
with fewer faces. Plans are applied merges-first, then deletes in plan
order, so the result is independent of discovery order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from facecurate import kernels
from facecurate.corpus import Corpus, load_corpus, write_corpus
from facecurate.corpus import EmbeddingStore, FaceRecord
from facecurate.errors import ConsistencyError, DimensionError
from facecurate.stats import StageStats

MERGE_THRESHOLD = 0.7
DELETE_LOW = 0.5


@dataclass
class CenterIndex:
    """Unit-norm folder centers, ascending by identity_id.

    Folders whose member mean had zero norm are excluded and reported in
    ``degenerate_ids``.
    """

    identity_ids: np.ndarray
    centers: np.ndarray
    degenerate_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if len(self.identity_ids) != len(self.centers):
            raise ConsistencyError("center index id/row count mismatch")

    @property
    def dim(self) -> int:
        return int(self.centers.shape[1])

    def __len__(self) -> int:
        return len(self.identity_ids)


def compute_centers(corpus: Corpus) -> CenterIndex:
    """L2-renormalized arithmetic mean per folder.

    Members are summed in ascending face_id order (folder member order), in
    float64, so centers are bit-stable across runs and worker counts.
    """
    idents = sorted(corpus.folders)
    centers = np.empty((len(idents), corpus.dim), dtype=np.float32)
    kept_ids: list[int] = []
    degenerate: list[int] = []
    pos = 0
    for ident in idents:
        s = corpus.folder_matrix(ident).astype(np.float64).sum(axis=0)
        norm = float(np.linalg.norm(s))
        if norm < 1e-12:
            degenerate.append(ident)
            continue
        centers[pos] = (s / norm).astype(np.float32)
        kept_ids.append(ident)
        pos += 1
    return CenterIndex(
        identity_ids=np.asarray(kept_ids, dtype=np.int64),
        centers=centers[:pos].copy(),
        degenerate_ids=tuple(degenerate),
    )


Edge = tuple[int, int, float]  # (id_a, id_b, similarity) with id_a < id_b


@dataclass
class MergePlan:
    """Edges sorted by descending similarity; ties by (id_a, id_b)
    ascending."""

    merge_edges: list[Edge] = field(default_factory=list)
    delete_edges: list[Edge] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.merge_edges) + len(self.delete_edges)


def _sort_edges(ids_a: np.ndarray, ids_b: np.ndarray, sims: np.ndarray) -> list[Edge]:
    order = np.lexsort((ids_b, ids_a, -sims))
    return [
        (int(ids_a[k]), int(ids_b[k]), float(sims[k])) for k in order
    ]


def plan_inter_class(
    index: CenterIndex,
    merge_threshold: float = MERGE_THRESHOLD,
    delete_low: float = DELETE_LOW,
    *,
    workers: int = 1,
) -> MergePlan:
    """All center pairs above delete_low, split into merge (> merge_threshold)
    and delete (delete_low, merge_threshold] edges."""
    if not delete_low <= merge_threshold:
        raise ValueError("delete_low must not exceed merge_threshold")
    n = len(index)
    if n < 2:
        return MergePlan()
    if workers > 1 and n > 2 * workers:
        # shard cuts snap to the scan kernel's block grid so the matmul
        # shapes, hence the result bits, never depend on the worker count
        grid = kernels.SCAN_BLOCK
        cuts = {min(n, int(round(b / grid)) * grid) for b in np.linspace(0, n, workers + 1)[1:-1]}
        bounds = sorted({0, n} | cuts)
        blocks = [
            (bounds[k], bounds[k + 1])
            for k in range(len(bounds) - 1)
            if bounds[k] < bounds[k + 1]
        ]

        def scan(block: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            lo, hi = block
            bi, bj, bs = kernels.self_similar_pairs(
                index.centers[lo:], delete_low, row_stop=hi - lo
            )
            return bi + lo, bj + lo, bs

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(scan, blocks))
        ii = np.concatenate([p[0] for p in parts])
        jj = np.concatenate([p[1] for p in parts])
        ss = np.concatenate([p[2] for p in parts])
    else:
        ii, jj, ss = kernels.self_similar_pairs(index.centers, delete_low)
    if ii.size == 0:
        return MergePlan()
    ids_a = index.identity_ids[ii]
    ids_b = index.identity_ids[jj]
    merging = ss > merge_threshold
    return MergePlan(
        merge_edges=_sort_edges(ids_a[merging], ids_b[merging], ss[merging]),
        delete_edges=_sort_edges(ids_a[~merging], ids_b[~merging], ss[~merging]),
    )


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[int, int] = {}

    def add(self, x: int) -> None:
        self.parent.setdefault(x, x)

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # attach the larger id under the smaller so roots stay minimal
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def apply_inter_class(corpus: Corpus, plan: MergePlan) -> tuple[Corpus, StageStats]:
    """Apply a plan: union-find over merge edges (the merged folder takes the
    lowest identity_id and the union of faces), then delete edges processed
    in plan order between surviving representatives. The representative with
    fewer faces is deleted; ties delete the higher identity_id. Edges whose
    endpoints were merged together or already deleted are skipped."""
    for a, b, _ in plan.merge_edges + plan.delete_edges:
        for ident in (a, b):
            if ident not in corpus.folders:
                raise ConsistencyError(f"plan references unknown identity {ident}")
    uf = _UnionFind()
    for ident in corpus.folders:
        uf.add(ident)
    for a, b, _ in plan.merge_edges:
        uf.union(a, b)
    members: dict[int, list[int]] = {}
    sizes: dict[int, int] = {}
    for ident in sorted(corpus.folders):
        rep = uf.find(ident)
        members.setdefault(rep, []).extend(corpus.folders[ident].member_face_ids)
        sizes[rep] = sizes.get(rep, 0) + corpus.folders[ident].size
    alive = set(members)
    for a, b, _ in plan.delete_edges:
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb or ra not in alive or rb not in alive:
            continue
        if sizes[ra] < sizes[rb]:
            victim = ra
        elif sizes[rb] < sizes[ra]:
            victim = rb
        else:
            victim = max(ra, rb)
        alive.remove(victim)
    keep = {rep: tuple(sorted(members[rep])) for rep in alive}
    merged = corpus.subset(keep)
    st = StageStats(
        stage="inter-class",
        identities_before=corpus.num_identities,
        identities_after=merged.num_identities,
        faces_before=corpus.num_faces,
        faces_after=merged.num_faces,
    )
    return merged, st


def write_merge_plan(plan: MergePlan, path) -> None:
    """Audit file: one edge per line (kind, id_a, id_b, similarity)."""
    lines = ["#PLAN1"]
    for kind, edges in (("merge", plan.merge_edges), ("delete", plan.delete_edges)):
        for a, b, s in edges:
            lines.append(f"{kind}\t{a}\t{b}\t{s:.9f}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def write_center_index(index: CenterIndex, manifest_path, embedding_path) -> None:
    """Persist centers as a standard corpus: one face per identity."""
    records = [
        FaceRecord(face_id=int(ident), identity_id=int(ident), embedding_index=k)
        for k, ident in enumerate(index.identity_ids)
    ]
    store = EmbeddingStore(index.centers, normalize=False)
    write_corpus(Corpus.build(records, store), manifest_path, embedding_path)


def load_center_index(manifest_path, embedding_path) -> CenterIndex:
    """Load an exclusion/center set from standard corpus files; folders with
    several faces contribute their renormalized mean."""
    return compute_centers(load_corpus(manifest_path, embedding_path))


def ensure_same_dim(index_a: CenterIndex, index_b: CenterIndex) -> None:
    if index_a.dim != index_b.dim:
        raise DimensionError(
            f"center dimensionality mismatch: {index_a.dim} vs {index_b.dim}"
        )
