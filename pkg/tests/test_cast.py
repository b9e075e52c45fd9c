from __future__ import annotations

import numpy as np
import pytest

from facecurate.cast import (
    CastConfig,
    EmbeddingProvider,
    FileProvider,
    StaticProvider,
    run_cast,
    similarity_distributions,
)
from facecurate.corpus import EmbeddingStore, corpora_equal
from facecurate.errors import ConfigError, ProviderError
from facecurate.synth import (
    CLASS_CLEAN,
    PerfectProvider,
    ShrinkingNoiseProvider,
    SynthSpec,
    generate,
    score_cleaning,
)

from conftest import build_corpus, sphere_points


def test_config_defaults():
    cfg = CastConfig()
    assert cfg.iterations == 3
    assert cfg.similarity_schedule == (0.5, 0.55, 0.6)
    assert cfg.min_pts == 3
    assert cfg.merge_threshold == 0.7
    assert cfg.delete_low == 0.5
    assert cfg.dedup_threshold == 0.95
    assert cfg.overlap_threshold == 0.7


def test_config_validation():
    with pytest.raises(ConfigError):
        CastConfig(iterations=0)
    with pytest.raises(ConfigError):
        CastConfig(similarity_schedule=(0.5, 0.4, 0.6))  # not non-decreasing
    with pytest.raises(ConfigError):
        CastConfig(iterations=3, similarity_schedule=(0.5, 0.55))  # too short
    with pytest.raises(ConfigError):
        CastConfig(delete_low=0.8, merge_threshold=0.7)


def test_config_from_file(tmp_path):
    path = tmp_path / "cast.cfg"
    path.write_text(
        "# comment\n"
        "iterations = 2\n"
        "similarity_schedule = 0.45, 0.5\n"
        "min_pts = 4\n"
        "seed = 9\n"
    )
    cfg = CastConfig.from_file(path)
    assert cfg.iterations == 2
    assert cfg.similarity_schedule == (0.45, 0.5)
    assert cfg.min_pts == 4 and cfg.seed == 9
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_key = 1\n")
    with pytest.raises(ConfigError, match="unknown"):
        CastConfig.from_file(bad)
    dup = tmp_path / "dup.cfg"
    dup.write_text("iterations = 2\niterations = 3\n")
    with pytest.raises(ConfigError, match="duplicate"):
        CastConfig.from_file(dup)


SPEC = SynthSpec(n_identities=70, dim=32, test_identities=3, seed=13)


@pytest.fixture(scope="module")
def data():
    return generate(SPEC)


def test_single_iteration_collapses_to_one_pass(data):
    corpus, truth = data
    cfg1 = CastConfig(iterations=1, similarity_schedule=(0.5,), histogram_folders=0)
    result = run_cast(corpus, PerfectProvider(truth), cfg1)
    names = [st.stage for st in result.stages]
    assert names == ["iter1-intra", "iter1-inter", "dedup"]
    assert len(result.merge_plans) == 1
    assert len(result.iteration_corpora) == 1


def test_each_iteration_recleans_the_raw_corpus(data):
    corpus, truth = data

    class SpyProvider(EmbeddingProvider):
        def __init__(self):
            self.inner = ShrinkingNoiseProvider(truth, (0.4, 0.3, 0.25), seed=1)
            self.seen = []

        def provide(self, iteration, c):
            self.seen.append((iteration, c.num_faces, c.num_identities))
            return self.inner.provide(iteration, c)

    spy = SpyProvider()
    result = run_cast(corpus, spy, CastConfig(histogram_folders=0))
    # the provider is always handed the full raw corpus, not last round's output
    assert spy.seen == [
        (1, corpus.num_faces, corpus.num_identities),
        (2, corpus.num_faces, corpus.num_identities),
        (3, corpus.num_faces, corpus.num_identities),
    ]
    # every intra stage starts from the raw face count
    intra = [st for st in result.stages if st.stage.endswith("-intra")]
    assert [st.faces_before for st in intra] == [corpus.num_faces] * 3


def test_final_corpus_carries_original_embeddings(data):
    corpus, truth = data
    result = run_cast(
        corpus, PerfectProvider(truth), CastConfig(histogram_folders=0)
    )
    for fid in list(result.corpus.faces)[:25]:
        assert result.corpus.row(fid).tobytes() == corpus.row(fid).tobytes()


def test_static_provider_loop(data):
    corpus, _ = data
    cfg = CastConfig(iterations=2, similarity_schedule=(0.5, 0.55),
                     histogram_folders=0)
    result = run_cast(corpus, StaticProvider(), cfg)
    assert result.corpus.num_faces <= corpus.num_faces
    # static teacher: both iterations see identical embeddings, so the
    # second intra pass at a tighter schedule keeps no more faces
    intra = [st for st in result.stages if st.stage.endswith("-intra")]
    assert intra[1].faces_after <= intra[0].faces_after


def test_file_provider_roundtrip(tmp_path, data):
    corpus, truth = data
    inner = ShrinkingNoiseProvider(truth, (0.4, 0.3, 0.25), seed=2)
    for i in (1, 2, 3):
        inner.provide(i, corpus).save(tmp_path / f"prov_{i}.emb")
    from_file = run_cast(
        corpus,
        FileProvider(str(tmp_path / "prov_{i}.emb")),
        CastConfig(histogram_folders=0),
    )
    direct = run_cast(corpus, inner, CastConfig(histogram_folders=0))
    assert corpora_equal(from_file.corpus, direct.corpus)


def test_provider_errors_are_wrapped(data):
    corpus, _ = data

    class WrongShape(EmbeddingProvider):
        def provide(self, iteration, c):
            return EmbeddingStore(sphere_points(3, c.dim, seed=0))

    class Crashes(EmbeddingProvider):
        def provide(self, iteration, c):
            raise RuntimeError("boom")

    with pytest.raises(ProviderError, match="iteration 1"):
        run_cast(corpus, WrongShape(), CastConfig(histogram_folders=0))
    with pytest.raises(ProviderError, match="boom"):
        run_cast(corpus, Crashes(), CastConfig(histogram_folders=0))


def test_exclusion_removes_planted_tests(data):
    corpus, truth = data
    provider = ShrinkingNoiseProvider(truth, (0.4, 0.3, 0.25), seed=3)
    result = run_cast(
        corpus, provider, CastConfig(histogram_folders=0),
        exclusion=truth.exclusion_index,
    )
    assert result.stages[-1].stage == "overlap"
    for tid in truth.test_identity_ids:
        assert tid not in result.corpus.folders
    score = score_cleaning(result.corpus, truth)
    assert score.test_identities_removed == score.test_identities_total


def test_histograms_attached_when_requested(data):
    corpus, truth = data
    result = run_cast(
        corpus, PerfectProvider(truth),
        CastConfig(iterations=1, similarity_schedule=(0.5,), histogram_folders=30),
    )
    inter = [st for st in result.stages if st.stage == "iter1-inter"][0]
    assert inter.intra_hist is not None and inter.inter_hist is not None
    assert inter.intra_hist.sum() > 0


def test_workers_do_not_change_result(data):
    corpus, truth = data
    provider = ShrinkingNoiseProvider(truth, (0.4, 0.3, 0.25), seed=4)
    base = run_cast(corpus, provider, CastConfig(histogram_folders=0))
    multi = run_cast(corpus, provider, CastConfig(histogram_folders=0), workers=4)
    assert corpora_equal(base.corpus, multi.corpus)


def test_similarity_distributions_mass():
    corpus = build_corpus(
        {k: [v] * 4 for k, v in enumerate(sphere_points(6, 8, seed=40))}
    )
    st = similarity_distributions(corpus)
    # 6 folders x C(4,2) intra pairs, C(6,2) center pairs
    assert st.intra_hist.sum() == 6 * 6
    assert st.inter_hist.sum() == 15
    sampled = similarity_distributions(corpus, sample_folders=3, seed=1)
    assert sampled.intra_hist.sum() == 3 * 6
