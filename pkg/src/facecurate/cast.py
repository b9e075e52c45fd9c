"""Iterative self-training cleaning loop.

Each iteration asks an embedding provider (the current teacher) for fresh
embeddings of the *original* raw corpus, then runs intra-class cleaning at
that iteration's similarity threshold followed by inter-class merge/delete.
Later iterations never see earlier iterations' output: re-cleaning always
starts from the raw folders, only the embeddings and the threshold change.
Duplicate suppression and benchmark-overlap removal run once, after the
final iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path

import numpy as np

from facecurate import kernels
from facecurate.cluster import DbscanParams, intra_class_clean
from facecurate.corpus import Corpus, EmbeddingStore, UNIT_NORM_TOL
from facecurate.dedup import remove_duplicates, remove_test_overlap
from facecurate.errors import ConfigError, ProviderError
from facecurate.merge import (
    CenterIndex,
    MergePlan,
    apply_inter_class,
    compute_centers,
    plan_inter_class,
)
from facecurate.stats import StageStats, similarity_histogram


@dataclass(frozen=True)
class CastConfig:
    """Knobs of the cleaning loop.

    ``similarity_schedule[k]`` is the intra-class similarity threshold of
    iteration k+1 (DBSCAN eps is one minus it) and must be non-decreasing.
    ``histogram_folders`` caps how many folders are sampled for the per-stage
    similarity histograms; 0 disables them.
    """

    iterations: int = 3
    similarity_schedule: tuple[float, ...] = (0.5, 0.55, 0.6)
    min_pts: int = 3
    merge_threshold: float = 0.7
    delete_low: float = 0.5
    dedup_threshold: float = 0.95
    overlap_threshold: float = 0.7
    seed: int = 0
    histogram_folders: int = 1000

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if len(self.similarity_schedule) < self.iterations:
            raise ConfigError(
                f"similarity_schedule has {len(self.similarity_schedule)} entries "
                f"but {self.iterations} iterations were requested"
            )
        last = None
        for s in self.similarity_schedule:
            if not 0.0 <= s <= 1.0:
                raise ConfigError(f"schedule value {s} outside [0, 1]")
            if last is not None and s < last:
                raise ConfigError("similarity_schedule must be non-decreasing")
            last = s
        if self.min_pts < 1:
            raise ConfigError("min_pts must be >= 1")
        if not 0.0 <= self.delete_low <= self.merge_threshold <= 1.0:
            raise ConfigError(
                "need 0 <= delete_low <= merge_threshold <= 1, got "
                f"{self.delete_low} and {self.merge_threshold}"
            )
        for name in ("dedup_threshold", "overlap_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.histogram_folders < 0:
            raise ConfigError("histogram_folders must be >= 0")

    @classmethod
    def from_file(cls, path: str | Path) -> "CastConfig":
        """Parse a plain-text ``key = value`` config file ('#' comments)."""
        pairs: dict[str, str] = {}
        for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in pairs:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            pairs[key] = value
        return cls.from_mapping(pairs, where=str(path))

    @classmethod
    def from_mapping(
        cls, pairs: dict[str, str], where: str = "config"
    ) -> "CastConfig":
        kwargs: dict = {}
        int_keys = {"iterations", "min_pts", "seed", "histogram_folders"}
        float_keys = {
            "merge_threshold",
            "delete_low",
            "dedup_threshold",
            "overlap_threshold",
        }
        for key, value in pairs.items():
            try:
                if key in int_keys:
                    kwargs[key] = int(value)
                elif key in float_keys:
                    kwargs[key] = float(value)
                elif key == "similarity_schedule":
                    kwargs[key] = tuple(
                        float(tok) for tok in value.split(",") if tok.strip()
                    )
                else:
                    raise ConfigError(f"{where}: unknown key {key!r}")
            except ValueError:
                raise ConfigError(f"{where}: bad value for {key!r}: {value!r}") from None
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None


class EmbeddingProvider:
    """Per-iteration embedding source (the teacher network's stand-in).

    ``provide`` must return a store with one unit-norm row per row of the
    raw corpus's store, at unchanged dimensionality, for every iteration.
    """

    def provide(self, iteration: int, corpus: Corpus) -> EmbeddingStore:
        raise NotImplementedError


class StaticProvider(EmbeddingProvider):
    """Reuses the corpus's own embeddings every iteration (frozen teacher)."""

    def provide(self, iteration: int, corpus: Corpus) -> EmbeddingStore:
        return corpus.store


class FileProvider(EmbeddingProvider):
    """Loads per-iteration embedding files from a path pattern.

    The pattern's ``{i}`` placeholder is replaced with the 1-based iteration
    number; a pattern without the placeholder serves the same file each time.
    """

    def __init__(self, pattern: str) -> None:
        self.pattern = pattern

    def provide(self, iteration: int, corpus: Corpus) -> EmbeddingStore:
        return EmbeddingStore.load(self.pattern.replace("{i}", str(iteration)))


@dataclass
class CastResult:
    corpus: Corpus
    stages: list[StageStats]
    merge_plans: list[MergePlan]
    iteration_corpora: list[Corpus] = field(default_factory=list)


def _checked_provide(
    provider: EmbeddingProvider, iteration: int, raw: Corpus
) -> EmbeddingStore:
    try:
        store = provider.provide(iteration, raw)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"iteration {iteration}: provider failed: {exc}") from exc
    if store.row_count != raw.store.row_count or store.dim != raw.store.dim:
        raise ProviderError(
            f"iteration {iteration}: provider returned shape "
            f"({store.row_count}, {store.dim}), expected "
            f"({raw.store.row_count}, {raw.store.dim})"
        )
    if store.row_count:
        norms = np.linalg.norm(store.rows.astype(np.float64), axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > UNIT_NORM_TOL:
            raise ProviderError(
                f"iteration {iteration}: provider rows deviate from unit norm "
                f"by up to {worst:.2e}"
            )
    return store


def similarity_distributions(
    corpus: Corpus,
    sample_folders: int | None = None,
    seed: int | np.random.SeedSequence = 0,
    *,
    stage: str = "distributions",
) -> StageStats:
    """Histogram within-folder pair similarities (intra) and center-pair
    similarities (inter) over a seeded folder sample.

    ``sample_folders`` of None, or anything at least the folder count, uses
    every folder.
    """
    idents = sorted(corpus.folders)
    if sample_folders is not None and sample_folders < len(idents):
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(idents), size=sample_folders, replace=False)
        idents = [idents[k] for k in sorted(picked)]
    intra_parts: list[np.ndarray] = []
    for ident in idents:
        mat = corpus.folder_matrix(ident)
        if mat.shape[0] < 2:
            continue
        sim = kernels.pairwise_similarity(mat, mat)
        iu, ju = np.triu_indices(mat.shape[0], k=1)
        intra_parts.append(sim[iu, ju])
    intra_values = (
        np.concatenate(intra_parts) if intra_parts else np.empty(0, dtype=np.float64)
    )
    sampled = corpus.subset(
        {ident: corpus.folders[ident].member_face_ids for ident in idents}
    )
    centers = compute_centers(sampled).centers
    if centers.shape[0] >= 2:
        csim = kernels.pairwise_similarity(centers, centers)
        iu, ju = np.triu_indices(centers.shape[0], k=1)
        inter_values = csim[iu, ju]
    else:
        inter_values = np.empty(0, dtype=np.float64)
    return StageStats(
        stage=stage,
        identities_before=corpus.num_identities,
        identities_after=corpus.num_identities,
        faces_before=corpus.num_faces,
        faces_after=corpus.num_faces,
        intra_hist=similarity_histogram(intra_values),
        inter_hist=similarity_histogram(inter_values),
    )


def run_cast(
    raw: Corpus,
    provider: EmbeddingProvider,
    config: CastConfig = CastConfig(),
    exclusion: CenterIndex | None = None,
    *,
    workers: int = 1,
) -> CastResult:
    """Run the full cleaning pipeline.

    Returns the final corpus together with per-stage statistics, the
    per-iteration merge plans, and each iteration's cleaned corpus. The
    overlap-removal stage runs only when an exclusion index is given.
    """
    stages: list[StageStats] = []
    plans: list[MergePlan] = []
    iteration_corpora: list[Corpus] = []
    current = raw
    for i in range(1, config.iterations + 1):
        store = _checked_provide(provider, i, raw)
        working = raw.with_store(store)
        eps = 1.0 - config.similarity_schedule[i - 1]
        cleaned, st_intra = intra_class_clean(
            working,
            DbscanParams(eps=eps, min_pts=config.min_pts),
            workers=workers,
            stage_name=f"iter{i}-intra",
        )
        centers = compute_centers(cleaned)
        plan = plan_inter_class(
            centers,
            config.merge_threshold,
            config.delete_low,
            workers=workers,
        )
        merged, st_inter = apply_inter_class(cleaned, plan)
        st_inter.stage = f"iter{i}-inter"
        if config.histogram_folders:
            dist = similarity_distributions(
                merged,
                sample_folders=config.histogram_folders,
                seed=np.random.SeedSequence([config.seed, i]),
            )
            st_inter = dc_replace(
                st_inter, intra_hist=dist.intra_hist, inter_hist=dist.inter_hist
            )
        stages.extend([st_intra, st_inter])
        plans.append(plan)
        iteration_corpora.append(merged)
        current = merged
    final, st_dedup = remove_duplicates(
        current, config.dedup_threshold, workers=workers
    )
    stages.append(st_dedup)
    if exclusion is not None:
        final, st_overlap = remove_test_overlap(
            final, exclusion, config.overlap_threshold
        )
        stages.append(st_overlap)
    # the product is a subset of the *original* corpus: re-point the
    # surviving faces at the raw embeddings, not the last teacher's
    final = final.with_store(raw.store)
    return CastResult(
        corpus=final,
        stages=stages,
        merge_plans=plans,
        iteration_corpora=iteration_corpora,
    )
