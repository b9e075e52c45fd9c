"""Synthetic corpora with known corruption ground truth.

Identities get unit-sphere prototypes kept apart by a separation floor;
member embeddings are prototypes plus tangent noise. Planted corruptions:

* ``outlier``: a face pointing somewhere else entirely (far outliers are
  uniform on the sphere, near outliers sit in a cosine band around the
  prototype so that harder noise survives early cleaning rounds);
* ``flipped``: a face that truly belongs to a different identity;
* ``exact-duplicate``: a bit-identical copy of an earlier clean face in the
  same folder;
* ``test-overlap``: whole folders duplicating planted benchmark identities;
* identity splits: one person's faces divided across two folders (faces stay
  class ``clean``; the corruption is recorded as a split pair).

Everything is derived from ``SynthSpec.seed``, so equal specs generate the
same corpus every time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from facecurate.cast import EmbeddingProvider
from facecurate.corpus import (
    AttributeSet,
    Corpus,
    EmbeddingStore,
    FaceRecord,
    Gender,
    Race,
    Scenario,
)
from facecurate.errors import GenerationError, ProviderError
from facecurate.merge import CenterIndex

CLASS_CLEAN = "clean"
CLASS_OUTLIER = "outlier"
CLASS_FLIPPED = "flipped"
CLASS_DUPLICATE = "exact-duplicate"
CLASS_TEST = "test-overlap"

# faces a folder needs before it may be split across two folders
_MIN_SPLIT_SIZE = 10

_RACE_PROBS = (
    (Race.CAUCASIAN, 0.45),
    (Race.EAST_ASIAN, 0.25),
    (Race.AFRICAN, 0.20),
    (Race.OTHER, 0.10),
)


@dataclass(frozen=True)
class SynthSpec:
    n_identities: int = 1000
    faces_per_identity: tuple[int, int] = (8, 24)
    dim: int = 512
    intra_spread: float = 0.45
    outlier_fraction: float = 0.2
    label_flip_fraction: float = 0.05
    duplicate_identity_fraction: float = 0.05
    exact_duplicate_fraction: float = 0.02
    test_identities: int = 10
    min_separation_deg: float = 60.0
    near_outlier_fraction: float = 0.3
    near_band: tuple[float, float] = (0.55, 0.8)
    annotate_attributes: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_identities < 1 or self.dim < 2:
            raise GenerationError("need n_identities >= 1 and dim >= 2")
        lo, hi = self.faces_per_identity
        if not 1 <= lo <= hi:
            raise GenerationError(f"bad faces_per_identity range ({lo}, {hi})")
        total_bad = (
            self.outlier_fraction
            + self.label_flip_fraction
            + self.exact_duplicate_fraction
        )
        for name in (
            "outlier_fraction",
            "label_flip_fraction",
            "duplicate_identity_fraction",
            "exact_duplicate_fraction",
            "near_outlier_fraction",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise GenerationError(f"{name} must be in [0, 1], got {v}")
        if total_bad >= 1.0:
            raise GenerationError("corruption fractions sum to >= 1")
        if self.test_identities < 0:
            raise GenerationError("test_identities must be >= 0")
        if not 0.0 < self.min_separation_deg <= 120.0:
            raise GenerationError("min_separation_deg must be in (0, 120]")
        if not -1.0 <= self.near_band[0] <= self.near_band[1] <= 1.0:
            raise GenerationError(f"bad near_band {self.near_band}")
        if self.intra_spread < 0.0:
            raise GenerationError("intra_spread must be >= 0")


@dataclass
class GroundTruth:
    """Per-face labels plus the folder-level corruption bookkeeping."""

    classes: dict[int, str]
    true_identity: dict[int, int]
    folder_of: dict[int, int]
    duplicate_source: dict[int, int]
    split_pairs: tuple[tuple[int, int], ...]
    test_identity_ids: tuple[int, ...]
    prototypes: np.ndarray
    true_directions: np.ndarray
    exclusion_index: CenterIndex
    spec: SynthSpec


def _sample_prototypes(
    rng: np.random.Generator, count: int, dim: int, max_cos: float
) -> np.ndarray:
    """Rejection-sample unit vectors with pairwise cosine <= max_cos."""
    protos = np.empty((count, dim), dtype=np.float64)
    placed = 0
    attempts_left = 5000 * count
    while placed < count:
        if attempts_left <= 0:
            raise GenerationError(
                f"cannot place {count} prototypes at "
                f">= {np.degrees(np.arccos(max_cos)):.0f} degree separation "
                f"in dim {dim}"
            )
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        attempts_left -= 1
        if placed and float(np.max(protos[:placed] @ v)) > max_cos:
            continue
        protos[placed] = v
        placed += 1
    return protos


def _unit_tangent(rng: np.random.Generator, u: np.ndarray) -> np.ndarray:
    g = rng.standard_normal(u.shape[0])
    g -= np.dot(g, u) * u
    norm = np.linalg.norm(g)
    while norm < 1e-12:  # essentially impossible, but stay total
        g = rng.standard_normal(u.shape[0])
        g -= np.dot(g, u) * u
        norm = np.linalg.norm(g)
    return g / norm


def _displace(rng: np.random.Generator, u: np.ndarray, scale: float) -> np.ndarray:
    """Unit vector at tangent displacement ``scale`` from unit vector ``u``."""
    if scale == 0.0:
        return u.copy()
    v = u + scale * _unit_tangent(rng, u)
    return v / np.linalg.norm(v)


def _attr_rows(
    rng: np.random.Generator, identity_count: int
) -> tuple[list[Race], list[Gender], list[int]]:
    races = [r for r, _ in _RACE_PROBS]
    probs = [p for _, p in _RACE_PROBS]
    race_idx = rng.choice(len(races), size=identity_count, p=probs)
    genders = rng.integers(0, 2, size=identity_count)
    base_age = rng.integers(18, 50, size=identity_count)
    return (
        [races[k] for k in race_idx],
        [Gender.MALE if g == 0 else Gender.FEMALE for g in genders],
        [int(a) for a in base_age],
    )


def generate(spec: SynthSpec) -> tuple[Corpus, GroundTruth]:
    """Build a corpus and its ground truth from a spec. Fully deterministic
    per seed."""
    root = np.random.SeedSequence(spec.seed)
    proto_rng, layout_rng, noise_rng, attr_rng = (
        np.random.default_rng(s) for s in root.spawn(4)
    )
    n = spec.n_identities
    n_test = spec.test_identities
    max_cos = float(np.cos(np.radians(spec.min_separation_deg)))
    prototypes = _sample_prototypes(proto_rng, n + n_test, spec.dim, max_cos)

    counts = layout_rng.integers(
        spec.faces_per_identity[0], spec.faces_per_identity[1] + 1, size=n
    )
    n_split = int(spec.duplicate_identity_fraction * n)
    candidates = [i for i in range(n) if counts[i] >= _MIN_SPLIT_SIZE]
    if n_split > len(candidates):
        raise GenerationError(
            f"{n_split} identity splits requested but only {len(candidates)} "
            f"folders have >= {_MIN_SPLIT_SIZE} faces"
        )
    split_originals = sorted(
        layout_rng.choice(candidates, size=n_split, replace=False).tolist()
    ) if n_split else []
    twin_base = n + n_test
    split_pairs = tuple(
        (orig, twin_base + k) for k, orig in enumerate(split_originals)
    )
    twin_of = {orig: twin for orig, twin in split_pairs}

    if spec.annotate_attributes:
        races, genders, base_ages = _attr_rows(attr_rng, n + n_test)

    # folder layout: (folder_id, true_identity, face_count)
    layout: list[tuple[int, int, int]] = []
    for ident in range(n):
        c = int(counts[ident])
        if ident in twin_of:
            keep = c - c // 2
            layout.append((ident, ident, keep))
        else:
            layout.append((ident, ident, c))
    test_ids = tuple(range(n, n + n_test))
    test_count_lo = min(max(spec.faces_per_identity[0], 4), spec.faces_per_identity[1])
    test_counts = layout_rng.integers(
        test_count_lo, spec.faces_per_identity[1] + 1, size=n_test
    )
    for k, tid in enumerate(test_ids):
        layout.append((tid, tid, int(test_counts[k])))
    for k, orig in enumerate(split_originals):
        layout.append((twin_base + k, orig, int(counts[orig]) // 2))

    # per-face classes and directions
    classes: dict[int, str] = {}
    true_identity: dict[int, int] = {}
    folder_of: dict[int, int] = {}
    duplicate_source: dict[int, int] = {}
    records: list[FaceRecord] = []
    total_faces = sum(c for _, _, c in layout)
    directions = np.empty((total_faces, spec.dim), dtype=np.float64)
    rows = np.empty((total_faces, spec.dim), dtype=np.float32)

    p_out, p_flip, p_dup = (
        spec.outlier_fraction,
        spec.label_flip_fraction,
        spec.exact_duplicate_fraction,
    )
    face_id = 0
    for folder_id, owner, count in layout:
        clean_so_far: list[int] = []
        for _ in range(count):
            fid = face_id
            face_id += 1
            folder_of[fid] = folder_id
            is_test = folder_id in test_ids
            if is_test:
                cls = CLASS_TEST
            else:
                u = layout_rng.random()
                if u < p_out:
                    cls = CLASS_OUTLIER
                elif u < p_out + p_flip and n >= 2:
                    cls = CLASS_FLIPPED
                elif u < p_out + p_flip + p_dup and clean_so_far:
                    cls = CLASS_DUPLICATE
                else:
                    cls = CLASS_CLEAN
            if cls in (CLASS_CLEAN, CLASS_TEST):
                true_identity[fid] = owner
                directions[fid] = prototypes[owner]
                if not is_test:
                    clean_so_far.append(fid)
            elif cls == CLASS_FLIPPED:
                target = int(layout_rng.integers(0, n - 1))
                if target >= owner:
                    target += 1
                true_identity[fid] = target
                directions[fid] = prototypes[target]
            elif cls == CLASS_DUPLICATE:
                src = clean_so_far[
                    int(layout_rng.integers(0, len(clean_so_far)))
                ]
                duplicate_source[fid] = src
                true_identity[fid] = owner
                directions[fid] = directions[src]
            else:  # outlier
                true_identity[fid] = -1
                if layout_rng.random() < spec.near_outlier_fraction:
                    lo, hi = spec.near_band
                    cos_t = lo + (hi - lo) * layout_rng.random()
                    sin_t = float(np.sqrt(max(0.0, 1.0 - cos_t * cos_t)))
                    t = _unit_tangent(layout_rng, prototypes[owner])
                    directions[fid] = cos_t * prototypes[owner] + sin_t * t
                else:
                    v = layout_rng.standard_normal(spec.dim)
                    directions[fid] = v / np.linalg.norm(v)
            classes[fid] = cls

            if spec.annotate_attributes:
                attrs = AttributeSet(
                    age=base_ages[owner] + int(attr_rng.integers(0, 26)),
                    race=races[owner],
                    gender=genders[owner],
                    scenario=(
                        Scenario.CONTROLLED
                        if attr_rng.random() < 0.5
                        else Scenario.WILD
                    ),
                    masked=bool(attr_rng.random() < 0.12),
                )
            else:
                attrs = AttributeSet()
            records.append(
                FaceRecord(
                    face_id=fid,
                    identity_id=folder_id,
                    embedding_index=fid,
                    attributes=attrs,
                )
            )

    # raw embeddings: true direction + tangent noise; duplicates copy bytes
    for fid in range(total_faces):
        if classes[fid] == CLASS_DUPLICATE:
            rows[fid] = rows[duplicate_source[fid]]
        else:
            rows[fid] = _displace(
                noise_rng, directions[fid], spec.intra_spread
            ).astype(np.float32)

    corpus = Corpus.build(records, EmbeddingStore(rows))
    exclusion = CenterIndex(
        identity_ids=np.asarray(test_ids, dtype=np.int64),
        centers=prototypes[n : n + n_test].astype(np.float32),
    )
    truth = GroundTruth(
        classes=classes,
        true_identity=true_identity,
        folder_of=folder_of,
        duplicate_source=duplicate_source,
        split_pairs=split_pairs,
        test_identity_ids=test_ids,
        prototypes=prototypes.astype(np.float32),
        true_directions=directions.astype(np.float32),
        exclusion_index=exclusion,
        spec=spec,
    )
    return corpus, truth


class ShrinkingNoiseProvider(EmbeddingProvider):
    """Simulated self-training teacher: every iteration re-embeds each face
    around its *true* direction with a per-iteration noise scale, normally
    shrinking as the teacher improves. Exact duplicates copy their source
    row bit-for-bit so they stay duplicates under every teacher."""

    def __init__(self, truth: GroundTruth, scales: tuple[float, ...], seed: int = 0):
        self.truth = truth
        self.scales = tuple(float(s) for s in scales)
        self.seed = seed

    def provide(self, iteration: int, corpus: Corpus) -> EmbeddingStore:
        if not 1 <= iteration <= len(self.scales):
            raise ProviderError(
                f"no noise scale configured for iteration {iteration}"
            )
        scale = self.scales[iteration - 1]
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, iteration])
        )
        rows = np.empty(
            (corpus.store.row_count, corpus.store.dim), dtype=np.float32
        )
        directions = self.truth.true_directions.astype(np.float64)
        for fid in sorted(corpus.faces):
            rec = corpus.faces[fid]
            if self.truth.classes.get(fid) == CLASS_DUPLICATE:
                src = corpus.faces[self.truth.duplicate_source[fid]]
                rows[rec.embedding_index] = rows[src.embedding_index]
            else:
                rows[rec.embedding_index] = _displace(
                    rng, directions[fid], scale
                ).astype(np.float32)
        return EmbeddingStore(rows)


class PerfectProvider(ShrinkingNoiseProvider):
    """Noise-free teacher: returns every face's true direction."""

    def __init__(self, truth: GroundTruth, iterations: int = 8):
        super().__init__(truth, (0.0,) * iterations)


@dataclass
class CleaningScore:
    """Cleaning quality against ground truth."""

    precision: float
    recall: float
    generated_by_class: dict[str, int]
    retained_by_class: dict[str, int]
    duplicate_pairs_total: int
    duplicate_pairs_unified: int
    test_identities_total: int
    test_identities_removed: int

    @property
    def duplicates_unified_fraction(self) -> float:
        if self.duplicate_pairs_total == 0:
            return 1.0
        return self.duplicate_pairs_unified / self.duplicate_pairs_total


def score_cleaning(result: Corpus, truth: GroundTruth) -> CleaningScore:
    """Precision/recall of clean-face retention plus per-class retention,
    split-pair unification, and planted-test removal."""
    generated: dict[str, int] = {}
    for cls in truth.classes.values():
        generated[cls] = generated.get(cls, 0) + 1
    retained: dict[str, int] = {}
    for fid in result.faces:
        cls = truth.classes[fid]
        retained[cls] = retained.get(cls, 0) + 1
    clean_kept = retained.get(CLASS_CLEAN, 0)
    total_kept = result.num_faces
    precision = clean_kept / total_kept if total_kept else 1.0
    clean_total = generated.get(CLASS_CLEAN, 0)
    recall = clean_kept / clean_total if clean_total else 1.0

    sources_present: dict[int, set[int]] = {}
    for ident, folder in result.folders.items():
        origin = sources_present.setdefault(ident, set())
        for fid in folder.member_face_ids:
            origin.add(truth.folder_of[fid])
    unified = 0
    for orig, twin in truth.split_pairs:
        if any({orig, twin} <= origins for origins in sources_present.values()):
            unified += 1

    surviving_test = {
        truth.folder_of[fid]
        for fid in result.faces
        if truth.folder_of[fid] in truth.test_identity_ids
    }
    return CleaningScore(
        precision=precision,
        recall=recall,
        generated_by_class=dict(sorted(generated.items())),
        retained_by_class=dict(sorted(retained.items())),
        duplicate_pairs_total=len(truth.split_pairs),
        duplicate_pairs_unified=unified,
        test_identities_total=len(truth.test_identity_ids),
        test_identities_removed=len(truth.test_identity_ids) - len(surviving_test),
    )


def write_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    """TSV of (face_id, corruption class), one face per line."""
    lines = ["#TRUTH1"]
    for fid in sorted(truth.classes):
        lines.append(f"{fid}\t{truth.classes[fid]}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
