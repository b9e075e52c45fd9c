from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facecurate.corpus import (
    AttributeSet,
    Corpus,
    EmbeddingStore,
    FaceRecord,
    Gender,
    Race,
    Scenario,
    corpora_equal,
    cosine_similarity,
    load_corpus,
    write_corpus,
)
from facecurate.errors import (
    ConsistencyError,
    DimensionError,
    FormatError,
    IngestError,
)

from conftest import build_corpus, sphere_points, unit


def test_store_normalizes_off_unit_rows():
    rows = np.array([[3.0, 4.0], [1.0, 0.0]], dtype=np.float32)
    store = EmbeddingStore(rows)
    norms = np.linalg.norm(store.rows.astype(np.float64), axis=1)
    assert np.allclose(norms, 1.0, atol=1e-6)


def test_store_keeps_near_unit_rows_bit_identical():
    rows = sphere_points(5, 16, seed=1)
    store = EmbeddingStore(rows.copy())
    assert store.rows.tobytes() == rows.tobytes()


def test_store_rejects_zero_rows():
    rows = np.zeros((3, 4), dtype=np.float32)
    rows[0, 0] = 1.0
    with pytest.raises(IngestError, match="zero"):
        EmbeddingStore(rows)


def test_store_roundtrip_bytes(tmp_path):
    rows = sphere_points(17, 33, seed=2)
    store = EmbeddingStore(rows)
    path = tmp_path / "x.emb"
    store.save(path)
    again = EmbeddingStore.load(path)
    assert again.rows.tobytes() == store.rows.tobytes()
    assert again.dim == 33 and again.row_count == 17
    # second save is byte-identical
    path2 = tmp_path / "y.emb"
    again.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_store_header_layout(tmp_path):
    store = EmbeddingStore(sphere_points(2, 3, seed=3))
    path = tmp_path / "x.emb"
    store.save(path)
    blob = path.read_bytes()
    magic, dim, rows = struct.unpack("<4sIQ", blob[:16])
    assert magic == b"EMB1" and dim == 3 and rows == 2
    assert len(blob) == 16 + 2 * 3 * 4


def test_store_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "x.emb"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(FormatError, match="magic"):
        EmbeddingStore.load(path)


def test_store_load_rejects_truncated_payload(tmp_path):
    store = EmbeddingStore(sphere_points(4, 8, seed=4))
    path = tmp_path / "x.emb"
    store.save(path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ConsistencyError):
        EmbeddingStore.load(path)


def test_cosine_similarity_matches_scalar_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = unit(rng.normal(size=12))
        b = unit(rng.normal(size=12))
        want = sum(float(x) * float(y) for x, y in zip(a, b))
        assert abs(cosine_similarity(a, b) - want) < 1e-9
        assert cosine_similarity(a, b) == cosine_similarity(b, a)


def test_cosine_similarity_dim_mismatch():
    with pytest.raises(DimensionError):
        cosine_similarity(unit([1, 0]), unit([1, 0, 0]))


def test_corpus_build_validates_indices():
    store = EmbeddingStore(sphere_points(2, 4, seed=6))
    recs = [FaceRecord(0, 0, 0), FaceRecord(1, 0, 5)]
    with pytest.raises(ConsistencyError, match="out of range"):
        Corpus.build(recs, store)
    recs = [FaceRecord(0, 0, 0), FaceRecord(0, 1, 1)]
    with pytest.raises(ConsistencyError, match="duplicate"):
        Corpus.build(recs, store)


def test_corpus_subset_keeps_rows_shared():
    corpus = build_corpus({0: [[1, 0, 0]] * 3, 1: [[0, 1, 0]] * 2})
    folder = corpus.folders[1]
    sub = corpus.subset({1: folder.member_face_ids})
    assert sub.num_identities == 1 and sub.num_faces == 2
    assert sub.store is corpus.store
    for fid in folder.member_face_ids:
        assert np.array_equal(sub.row(fid), corpus.row(fid))


def test_manifest_roundtrip_with_attributes(tmp_path):
    attrs = {
        0: AttributeSet(age=30, race=Race.CAUCASIAN, gender=Gender.MALE,
                        scenario=Scenario.CONTROLLED, masked=False),
        1: AttributeSet(age=55, race=Race.AFRICAN, gender=Gender.FEMALE,
                        scenario=Scenario.WILD, masked=True),
        2: AttributeSet(),
    }
    corpus = build_corpus({3: [[1, 0], [0, 1]], 9: [[1, 1]]}, attrs)
    write_corpus(corpus, tmp_path / "m.tsv", tmp_path / "e.emb")
    again = load_corpus(tmp_path / "m.tsv", tmp_path / "e.emb")
    assert corpora_equal(corpus, again)
    assert again.faces[1].attributes == attrs[1]
    assert again.faces[2].attributes == AttributeSet()
    # rewrite is byte-stable
    write_corpus(again, tmp_path / "m2.tsv", tmp_path / "e2.emb")
    assert (tmp_path / "m.tsv").read_bytes() == (tmp_path / "m2.tsv").read_bytes()
    assert (tmp_path / "e.emb").read_bytes() == (tmp_path / "e2.emb").read_bytes()


def test_manifest_header_and_dim_check(tmp_path):
    corpus = build_corpus({0: [[1, 0, 0]]})
    write_corpus(corpus, tmp_path / "m.tsv", tmp_path / "e.emb")
    first = (tmp_path / "m.tsv").read_text().splitlines()[0]
    assert first == "#MAN1 dim=3"
    # store with a different dim must be rejected
    EmbeddingStore(sphere_points(1, 5, seed=7)).save(tmp_path / "bad.emb")
    with pytest.raises(ConsistencyError):
        load_corpus(tmp_path / "m.tsv", tmp_path / "bad.emb")


def test_manifest_bad_line_reports_lineno(tmp_path):
    corpus = build_corpus({0: [[1, 0]]})
    write_corpus(corpus, tmp_path / "m.tsv", tmp_path / "e.emb")
    text = (tmp_path / "m.tsv").read_text() + "1\t2\tnot-an-int\t\t\t\t\t0\n"
    (tmp_path / "m.tsv").write_text(text)
    with pytest.raises(FormatError, match=r"m\.tsv:3"):
        load_corpus(tmp_path / "m.tsv", tmp_path / "e.emb")


def test_write_corpus_compacts_embedding_indices(tmp_path):
    corpus = build_corpus({0: [[1, 0, 0]] * 4, 1: [[0, 1, 0]] * 4})
    sub = corpus.subset({1: corpus.folders[1].member_face_ids})
    write_corpus(sub, tmp_path / "m.tsv", tmp_path / "e.emb")
    again = load_corpus(tmp_path / "m.tsv", tmp_path / "e.emb")
    assert again.store.row_count == 4
    idx = [again.faces[f].embedding_index for f in sorted(again.faces)]
    assert idx == [0, 1, 2, 3]
    assert corpora_equal(sub, again)


def test_attribute_set_rejects_negative_age():
    with pytest.raises(FormatError):
        AttributeSet(age=-1)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-10, 10), min_size=6, max_size=6).filter(
            lambda v: sum(x * x for x in v) > 1e-4
        ),
        min_size=1,
        max_size=8,
    )
)
def test_store_rows_always_unit_norm(vectors):
    rows = np.asarray(vectors, dtype=np.float32)
    store = EmbeddingStore(rows)
    norms = np.linalg.norm(store.rows.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-4)
