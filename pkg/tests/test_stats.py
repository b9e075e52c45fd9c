from __future__ import annotations

import numpy as np
import pytest

from facecurate.errors import ConsistencyError
from facecurate.stats import (
    HIST_BINS,
    StageStats,
    bin_edges,
    histogram_overlap,
    similarity_histogram,
    write_histogram_csv,
    write_stage_stats,
)


def test_histogram_mass_equals_count():
    rng = np.random.default_rng(0)
    vals = rng.uniform(-1, 1, size=5000)
    hist = similarity_histogram(vals)
    assert hist.shape == (HIST_BINS,)
    assert hist.dtype == np.int64
    assert hist.sum() == 5000


def test_histogram_clips_out_of_range():
    hist = similarity_histogram(np.array([-2.0, 2.0, 1.0, -1.0]))
    assert hist.sum() == 4
    assert hist[0] == 2 and hist[-1] == 2


def test_bin_edges_span():
    edges = bin_edges()
    assert edges[0] == -1.0 and edges[-1] == 1.0
    assert len(edges) == HIST_BINS + 1


def test_overlap_bounds_and_identity():
    a = similarity_histogram(np.random.default_rng(1).uniform(-1, 1, 1000))
    assert histogram_overlap(a, a) == pytest.approx(1.0)
    disjoint = similarity_histogram(np.full(10, -0.9))
    far = similarity_histogram(np.full(10, 0.9))
    assert histogram_overlap(disjoint, far) == 0.0
    assert histogram_overlap(a, np.zeros(HIST_BINS, dtype=np.int64)) == 0.0


def test_overlap_scale_invariant():
    # overlap compares mass-normalized shapes, not raw counts
    a = similarity_histogram(np.linspace(-0.5, 0.5, 100))
    b = similarity_histogram(np.repeat(np.linspace(-0.5, 0.5, 100), 7))
    assert histogram_overlap(a, b) == pytest.approx(1.0)


def test_stage_stats_rejects_growth():
    with pytest.raises(ConsistencyError):
        StageStats("x", identities_before=5, identities_after=6,
                   faces_before=10, faces_after=10)
    with pytest.raises(ConsistencyError):
        StageStats("x", identities_before=5, identities_after=5,
                   faces_before=10, faces_after=11)


def test_stage_stats_tsv(tmp_path):
    stages = [
        StageStats("a", 10, 9, 100, 80),
        StageStats("b", 9, 9, 80, 75),
    ]
    path = tmp_path / "stages.tsv"
    write_stage_stats(stages, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("stage\t")
    assert lines[1] == "a\t10\t9\t100\t80"
    assert lines[2] == "b\t9\t9\t80\t75"


def test_histogram_csv(tmp_path):
    hist = similarity_histogram(np.array([0.0, 0.5, 0.5]))
    path = tmp_path / "h.csv"
    write_histogram_csv(hist, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count"
    assert len(lines) == HIST_BINS + 1
    total = sum(int(ln.rsplit(",", 1)[1]) for ln in lines[1:])
    assert total == 3
