"""Identity-labeled embedding corpus model and on-disk formats.

A corpus is a pair of files:

* a TSV manifest (UTF-8, LF), first line ``#MAN1 dim=<d>``, then one face per
  line with fields ``face_id identity_id embedding_index age race gender
  scenario masked`` (empty field = attribute absent, masked is ``0``/``1``);
* a binary embedding file: 16-byte little-endian header (magic ``EMB1``,
  u32 dim, u64 row_count) followed by row-major float32 rows.

Rows are L2-normalized on ingest; a row that cannot be normalized (all
zeros) is rejected.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from facecurate.errors import (
    ConsistencyError,
    DimensionError,
    FormatError,
    IngestError,
)

EMB_MAGIC = b"EMB1"
EMB_HEADER = struct.Struct("<4sIQ")
MANIFEST_MAGIC = "#MAN1"

DEFAULT_DIM = 512

# |norm - 1| above this gets renormalized on ingest; below it the row is
# accepted as-is so that write/load cycles are byte-stable.
_RENORM_SKIP_TOL = 1e-6
_ZERO_NORM_TOL = 1e-12
UNIT_NORM_TOL = 1e-4


class Race(enum.Enum):
    CAUCASIAN = "Caucasian"
    EAST_ASIAN = "EastAsian"
    AFRICAN = "African"
    OTHER = "Other"


class Gender(enum.Enum):
    MALE = "Male"
    FEMALE = "Female"


class Scenario(enum.Enum):
    CONTROLLED = "Controlled"
    WILD = "Wild"


_RACE_BY_VALUE = {r.value: r for r in Race}
_GENDER_BY_VALUE = {g.value: g for g in Gender}
_SCENARIO_BY_VALUE = {s.value: s for s in Scenario}


@dataclass(frozen=True)
class AttributeSet:
    """Optional demographic/capture attributes of a single face."""

    age: int | None = None
    race: Race | None = None
    gender: Gender | None = None
    scenario: Scenario | None = None
    masked: bool = False

    def __post_init__(self) -> None:
        if self.age is not None and (not isinstance(self.age, int) or self.age < 0):
            raise FormatError(f"age must be a non-negative integer, got {self.age!r}")


@dataclass(frozen=True)
class FaceRecord:
    face_id: int
    identity_id: int
    embedding_index: int
    attributes: AttributeSet = field(default_factory=AttributeSet)


@dataclass(frozen=True)
class IdentityFolder:
    """All faces sharing one identity label.

    ``member_face_ids`` is kept sorted ascending; every deterministic
    tie-break downstream relies on that ordering.
    """

    identity_id: int
    member_face_ids: tuple[int, ...]
    center: np.ndarray | None = None

    def __post_init__(self) -> None:
        members = tuple(sorted(self.member_face_ids))
        if len(set(members)) != len(members):
            raise ConsistencyError(
                f"duplicate face_id in folder {self.identity_id}"
            )
        object.__setattr__(self, "member_face_ids", members)

    @property
    def size(self) -> int:
        return len(self.member_face_ids)


class EmbeddingStore:
    """Fixed-dimension float32 row store backing a corpus.

    Parameters
    ----------
    rows:
        (row_count, dim) array; converted to C-contiguous float32.
    normalize:
        When true, rows whose L2 norm deviates from 1 by more than a small
        tolerance are renormalized; exact re-ingest of an already-normalized
        file leaves the bytes untouched.
    """

    def __init__(self, rows: np.ndarray, *, normalize: bool = True) -> None:
        rows = np.ascontiguousarray(rows, dtype=np.float32)
        if rows.ndim != 2:
            raise FormatError(f"embedding rows must be 2-D, got shape {rows.shape}")
        if normalize and rows.shape[0]:
            rows = _normalize_rows(rows)
        self._rows = rows

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    @property
    def dim(self) -> int:
        return int(self._rows.shape[1])

    @property
    def row_count(self) -> int:
        return int(self._rows.shape[0])

    def row(self, index: int) -> np.ndarray:
        return self._rows[index]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(EMB_HEADER.pack(EMB_MAGIC, self.dim, self.row_count))
            fh.write(self._rows.tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        path = Path(path)
        with open(path, "rb") as fh:
            header = fh.read(EMB_HEADER.size)
            if len(header) != EMB_HEADER.size:
                raise FormatError(f"{path}: truncated embedding header")
            magic, dim, row_count = EMB_HEADER.unpack(header)
            if magic != EMB_MAGIC:
                raise FormatError(
                    f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}"
                )
            payload = fh.read()
        expected = row_count * dim * 4
        if len(payload) != expected:
            raise ConsistencyError(
                f"{path}: header declares {row_count} rows of dim {dim} "
                f"({expected} bytes) but payload has {len(payload)} bytes"
            )
        rows = np.frombuffer(payload, dtype="<f4").reshape(row_count, dim)
        try:
            return cls(rows)
        except IngestError as exc:
            raise IngestError(f"{path}: {exc}") from None


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms < _ZERO_NORM_TOL)
    if zero.size:
        shown = ", ".join(str(i) for i in zero[:5])
        raise IngestError(
            f"{zero.size} embedding row(s) have zero norm and cannot be "
            f"normalized (first indices: {shown})"
        )
    off = np.abs(norms - 1.0) > _RENORM_SKIP_TOL
    if np.any(off):
        rows = rows.copy()
        rows[off] = (
            rows[off].astype(np.float64) / norms[off, None]
        ).astype(np.float32)
    return rows


@dataclass
class Corpus:
    """Immutable-by-convention snapshot: folders, face records, embeddings."""

    folders: dict[int, IdentityFolder]
    faces: dict[int, FaceRecord]
    store: EmbeddingStore

    @classmethod
    def build(cls, records: list[FaceRecord], store: EmbeddingStore) -> "Corpus":
        faces: dict[int, FaceRecord] = {}
        members: dict[int, list[int]] = {}
        for rec in records:
            if rec.face_id in faces:
                raise ConsistencyError(f"duplicate face_id {rec.face_id}")
            if not 0 <= rec.embedding_index < store.row_count:
                raise ConsistencyError(
                    f"face {rec.face_id}: embedding_index {rec.embedding_index} "
                    f"out of range for store with {store.row_count} rows"
                )
            faces[rec.face_id] = rec
            members.setdefault(rec.identity_id, []).append(rec.face_id)
        folders = {
            ident: IdentityFolder(ident, tuple(ids))
            for ident, ids in sorted(members.items())
        }
        faces = {fid: faces[fid] for fid in sorted(faces)}
        return cls(folders=folders, faces=faces, store=store)

    @property
    def num_identities(self) -> int:
        return len(self.folders)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def dim(self) -> int:
        return self.store.dim

    def row(self, face_id: int) -> np.ndarray:
        return self.store.row(self.faces[face_id].embedding_index)

    def folder_matrix(self, identity_id: int) -> np.ndarray:
        """(m, dim) float32 matrix of one folder's embeddings, member order."""
        folder = self.folders[identity_id]
        idx = np.fromiter(
            (self.faces[fid].embedding_index for fid in folder.member_face_ids),
            dtype=np.int64,
            count=folder.size,
        )
        return np.ascontiguousarray(self.store.rows[idx])

    def subset(self, keep: dict[int, tuple[int, ...]]) -> "Corpus":
        """Corpus restricted to ``{identity_id: surviving face_ids}``.

        Shares the backing store; folders with no survivors must simply be
        absent from ``keep``.
        """
        folders: dict[int, IdentityFolder] = {}
        faces: dict[int, FaceRecord] = {}
        for ident in sorted(keep):
            ids = keep[ident]
            if not ids:
                continue
            folders[ident] = IdentityFolder(ident, tuple(ids))
            for fid in folders[ident].member_face_ids:
                rec = self.faces[fid]
                if rec.identity_id != ident:
                    rec = replace(rec, identity_id=ident)
                faces[fid] = rec
        faces = {fid: faces[fid] for fid in sorted(faces)}
        return Corpus(folders=folders, faces=faces, store=self.store)

    def with_store(self, store: EmbeddingStore) -> "Corpus":
        if store.row_count != self.store.row_count or store.dim != self.store.dim:
            raise DimensionError(
                f"replacement store shape ({store.row_count}, {store.dim}) does "
                f"not match ({self.store.row_count}, {self.store.dim})"
            )
        return Corpus(folders=self.folders, faces=self.faces, store=store)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two embedding vectors, clamped to [-1, 1].

    Both operand orders run the identical float operations, so the result
    is exactly symmetric.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    s = float(np.dot(a, b))
    return min(1.0, max(-1.0, s))


def _format_attrs(attrs: AttributeSet) -> list[str]:
    return [
        "" if attrs.age is None else str(attrs.age),
        "" if attrs.race is None else attrs.race.value,
        "" if attrs.gender is None else attrs.gender.value,
        "" if attrs.scenario is None else attrs.scenario.value,
        "1" if attrs.masked else "0",
    ]


def _parse_attrs(fields: list[str], where: str) -> AttributeSet:
    age_s, race_s, gender_s, scenario_s, masked_s = fields
    try:
        age = int(age_s) if age_s else None
    except ValueError:
        raise FormatError(f"{where}: bad age {age_s!r}") from None
    if race_s and race_s not in _RACE_BY_VALUE:
        raise FormatError(f"{where}: unknown race {race_s!r}")
    if gender_s and gender_s not in _GENDER_BY_VALUE:
        raise FormatError(f"{where}: unknown gender {gender_s!r}")
    if scenario_s and scenario_s not in _SCENARIO_BY_VALUE:
        raise FormatError(f"{where}: unknown scenario {scenario_s!r}")
    if masked_s not in ("0", "1"):
        raise FormatError(f"{where}: masked must be 0 or 1, got {masked_s!r}")
    try:
        return AttributeSet(
            age=age,
            race=_RACE_BY_VALUE.get(race_s),
            gender=_GENDER_BY_VALUE.get(gender_s),
            scenario=_SCENARIO_BY_VALUE.get(scenario_s),
            masked=masked_s == "1",
        )
    except FormatError as exc:
        raise FormatError(f"{where}: {exc}") from None


def load_corpus(manifest_path: str | Path, embedding_path: str | Path) -> Corpus:
    """Load a corpus from a manifest/embedding file pair."""
    manifest_path = Path(manifest_path)
    store = EmbeddingStore.load(embedding_path)
    with open(manifest_path, encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\n")
        parts = first.split()
        if not parts or parts[0] != MANIFEST_MAGIC:
            raise FormatError(
                f"{manifest_path}: first line must start with {MANIFEST_MAGIC!r}"
            )
        declared_dim = None
        for token in parts[1:]:
            if token.startswith("dim="):
                try:
                    declared_dim = int(token[4:])
                except ValueError:
                    raise FormatError(
                        f"{manifest_path}: bad dim declaration {token!r}"
                    ) from None
        if declared_dim is None:
            raise FormatError(f"{manifest_path}: header lacks dim= declaration")
        if declared_dim != store.dim:
            raise ConsistencyError(
                f"{manifest_path}: manifest declares dim={declared_dim} but "
                f"embedding file has dim={store.dim}"
            )
        records: list[FaceRecord] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            where = f"{manifest_path}:{lineno}"
            fields = line.split("\t")
            if len(fields) != 8:
                raise FormatError(
                    f"{where}: expected 8 tab-separated fields, got {len(fields)}"
                )
            try:
                face_id = int(fields[0])
                identity_id = int(fields[1])
                embedding_index = int(fields[2])
            except ValueError:
                raise FormatError(f"{where}: bad integer field") from None
            records.append(
                FaceRecord(
                    face_id=face_id,
                    identity_id=identity_id,
                    embedding_index=embedding_index,
                    attributes=_parse_attrs(fields[3:], where),
                )
            )
    return Corpus.build(records, store)


def write_corpus(
    corpus: Corpus, manifest_path: str | Path, embedding_path: str | Path
) -> None:
    """Write a corpus in canonical order.

    Folders are scanned ascending by identity_id, faces ascending by
    face_id, and embedding rows are compacted into that scan order, so the
    same corpus always serializes to identical bytes.
    """
    order: list[int] = []
    for ident in sorted(corpus.folders):
        order.extend(corpus.folders[ident].member_face_ids)
    dim = corpus.dim
    rows = np.empty((len(order), dim), dtype=np.float32)
    lines: list[str] = [f"{MANIFEST_MAGIC} dim={dim}"]
    for new_index, fid in enumerate(order):
        rec = corpus.faces[fid]
        rows[new_index] = corpus.store.row(rec.embedding_index)
        fields = [str(rec.face_id), str(rec.identity_id), str(new_index)]
        fields.extend(_format_attrs(rec.attributes))
        lines.append("\t".join(fields))
    EmbeddingStore(rows, normalize=False).save(embedding_path)
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def corpora_equal(a: Corpus, b: Corpus) -> bool:
    """Structural equality: folders, face records, and embedding bytes."""
    if sorted(a.folders) != sorted(b.folders):
        return False
    for ident in a.folders:
        if a.folders[ident].member_face_ids != b.folders[ident].member_face_ids:
            return False
    for fid, rec in a.faces.items():
        other = b.faces[fid]
        if rec.identity_id != other.identity_id or rec.attributes != other.attributes:
            return False
        if a.row(fid).tobytes() != b.row(fid).tobytes():
            return False
    return True
