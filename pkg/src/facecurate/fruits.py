"""Time-budgeted 1:1 verification harness.

Builds attribute-sliced pair protocols from a corpus, estimates FNMR at a
target FMR, aggregates per-group fairness metrics, and measures matcher
latency against fixed per-pair millisecond budgets (the 100/500/1000 ms
tracks), one pair per invocation, or two when flip evaluation is enabled.

External matchers are separate processes invoked per probe batch: they read
a pair-list file (``face_id_a<TAB>face_id_b`` lines) passed as their last
argument and print one decimal similarity per line, LF-terminated.
"""

from __future__ import annotations

import math
import statistics
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from facecurate.corpus import Corpus, Race, Gender, Scenario
from facecurate.errors import (
    FairnessError,
    InsufficientPairsError,
    MatcherError,
    ProtocolError,
)

TRACKS = {
    "FRUITS-100": 100.0,
    "FRUITS-500": 500.0,
    "FRUITS-1000": 1000.0,
}

DEFAULT_IMPOSTOR_CAP = 10_000_000
DEFAULT_TARGET_FMR = 1e-5

BASE_SLICES = (
    "all",
    "cross-age-10",
    "cross-age-20",
    "controlled",
    "wild",
    "cross-scene",
    "controlled-masked",
    "wild-masked",
    "all-masked",
)


@dataclass(frozen=True)
class TimeBudget:
    """One latency track: per-pair budget in milliseconds. Flip evaluation
    doubles the per-invocation batch to two pairs."""

    track: str
    budget_ms: float
    flip: bool = False

    @property
    def batch_size(self) -> int:
        return 2 if self.flip else 1

    @classmethod
    def from_track(cls, track: str, flip: bool = False) -> "TimeBudget":
        if track not in TRACKS:
            raise ValueError(
                f"unknown track {track!r}; expected one of {sorted(TRACKS)}"
            )
        return cls(track=track, budget_ms=TRACKS[track], flip=flip)


@dataclass
class PairProtocol:
    """Genuine/impostor pairs of one slice as (n, 2) face_id arrays."""

    slice_name: str
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self) -> None:
        self.genuine = np.asarray(self.genuine, dtype=np.int64).reshape(-1, 2)
        self.impostor = np.asarray(self.impostor, dtype=np.int64).reshape(-1, 2)


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self) -> None:
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.impostor = np.asarray(self.impostor, dtype=np.float64).ravel()
        for name, arr in (("genuine", self.genuine), ("impostor", self.impostor)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} scores contain non-finite values")


@dataclass
class GroupMetrics:
    fnmr_by_group: dict[str, float]
    avg: float
    std: float
    ser: float


class _Faces:
    """Column view of a corpus's faces for vectorized pair filtering."""

    def __init__(self, corpus: Corpus) -> None:
        fids = sorted(corpus.faces)
        n = len(fids)
        self.face_id = np.asarray(fids, dtype=np.int64)
        self.identity = np.empty(n, dtype=np.int64)
        self.age = np.full(n, -1, dtype=np.int64)
        self.masked = np.zeros(n, dtype=bool)
        self.scenario = np.full(n, -1, dtype=np.int8)  # 0 controlled, 1 wild
        self.race = np.full(n, -1, dtype=np.int8)
        self.gender = np.full(n, -1, dtype=np.int8)
        races = list(Race)
        genders = list(Gender)
        for k, fid in enumerate(fids):
            rec = corpus.faces[fid]
            at = rec.attributes
            self.identity[k] = rec.identity_id
            if at.age is not None:
                self.age[k] = at.age
            self.masked[k] = at.masked
            if at.scenario is not None:
                self.scenario[k] = 0 if at.scenario is Scenario.CONTROLLED else 1
            if at.race is not None:
                self.race[k] = races.index(at.race)
            if at.gender is not None:
                self.gender[k] = genders.index(at.gender)


def _parse_slice(name: str) -> tuple[str, str | None]:
    lowered = name.strip().lower()
    if lowered in BASE_SLICES:
        return lowered, None
    if ":" in lowered:
        kind, _, value = lowered.partition(":")
        if kind == "race":
            for r in Race:
                if r.value.lower() == value:
                    return "race", r.value
        if kind == "gender":
            for g in Gender:
                if g.value.lower() == value:
                    return "gender", g.value
    raise ProtocolError(
        f"unknown slice {name!r}; expected one of {', '.join(BASE_SLICES)}, "
        f"race:<value>, or gender:<value>"
    )


def _require_attribute(present: bool, slice_name: str, attr: str) -> None:
    if not present:
        raise ProtocolError(
            f"slice {slice_name!r} requires the {attr} attribute, which is "
            f"absent from every face in the corpus"
        )


def _slice_pools(
    cols: _Faces, kind: str, value: str | None, slice_name: str
) -> tuple[np.ndarray, np.ndarray | None, int]:
    """Row-index pools for a slice.

    Returns (pool_a, pool_b, age_gap). pool_b of None means pairs come from
    within pool_a; otherwise pairs take one face from each pool.
    """
    unmasked = ~cols.masked
    if kind == "all":
        return np.flatnonzero(unmasked), None, 0
    if kind in ("cross-age-10", "cross-age-20"):
        _require_attribute(bool(np.any(cols.age >= 0)), slice_name, "age")
        pool = np.flatnonzero(unmasked & (cols.age >= 0))
        return pool, None, 10 if kind.endswith("10") else 20
    if kind in ("controlled", "wild"):
        _require_attribute(bool(np.any(cols.scenario >= 0)), slice_name, "scenario")
        want = 0 if kind == "controlled" else 1
        return np.flatnonzero(unmasked & (cols.scenario == want)), None, 0
    if kind == "cross-scene":
        _require_attribute(bool(np.any(cols.scenario >= 0)), slice_name, "scenario")
        a = np.flatnonzero(unmasked & (cols.scenario == 0))
        b = np.flatnonzero(unmasked & (cols.scenario == 1))
        return a, b, 0
    if kind in ("controlled-masked", "wild-masked", "all-masked"):
        masked_pool = np.flatnonzero(cols.masked)
        if kind == "all-masked":
            partner = np.flatnonzero(unmasked)
        else:
            _require_attribute(
                bool(np.any(cols.scenario >= 0)), slice_name, "scenario"
            )
            want = 0 if kind == "controlled-masked" else 1
            partner = np.flatnonzero(unmasked & (cols.scenario == want))
        return masked_pool, partner, 0
    if kind == "race":
        _require_attribute(bool(np.any(cols.race >= 0)), slice_name, "race")
        want = [r.value for r in Race].index(value)
        return np.flatnonzero(unmasked & (cols.race == want)), None, 0
    if kind == "gender":
        _require_attribute(bool(np.any(cols.gender >= 0)), slice_name, "gender")
        want = [g.value for g in Gender].index(value)
        return np.flatnonzero(unmasked & (cols.gender == want)), None, 0
    raise AssertionError(kind)


def _pair_block(
    cols: _Faces,
    rows_a: np.ndarray,
    rows_b: np.ndarray,
    age_gap: int,
    *,
    same_identity: bool,
    shared_pool: bool,
) -> np.ndarray:
    """All valid (face_id_a, face_id_b) pairs between two row pools,
    oriented so face_id_a < face_id_b."""
    if rows_a.size == 0 or rows_b.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    ia = cols.identity[rows_a][:, None]
    ib = cols.identity[rows_b][None, :]
    mask = (ia == ib) if same_identity else (ia != ib)
    fa = cols.face_id[rows_a][:, None]
    fb = cols.face_id[rows_b][None, :]
    if shared_pool:
        # both pools are the same faces: keep each unordered pair once
        mask &= fa < fb
    if age_gap:
        gap = np.abs(cols.age[rows_a][:, None] - cols.age[rows_b][None, :])
        mask &= gap >= age_gap
    a_idx, b_idx = np.nonzero(mask)
    out = np.empty((a_idx.size, 2), dtype=np.int64)
    out[:, 0] = cols.face_id[rows_a[a_idx]]
    out[:, 1] = cols.face_id[rows_b[b_idx]]
    if not shared_pool:
        out.sort(axis=1)
    return out


def _canonical_pairs(pairs: np.ndarray) -> np.ndarray:
    if pairs.shape[0] == 0:
        return pairs
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def build_protocol(
    corpus: Corpus,
    slice_name: str,
    *,
    seed: int = 0,
    impostor_cap: int = DEFAULT_IMPOSTOR_CAP,
) -> PairProtocol:
    """Pair protocol of one slice.

    Genuine pairs are exhaustive; impostor pairs are exhaustive whenever the
    candidate pool is at most ``impostor_cap`` pairs and a seeded
    without-replacement sample of ``impostor_cap`` pairs otherwise. Both
    lists come out sorted, so a (corpus, slice, seed, cap) tuple always
    produces the same protocol.
    """
    if impostor_cap < 1:
        raise ValueError("impostor_cap must be >= 1")
    kind, value = _parse_slice(slice_name)
    cols = _Faces(corpus)
    pool_a, pool_b, age_gap = _slice_pools(cols, kind, value, slice_name)
    two_pool = pool_b is not None

    genuine_parts = []
    impostor_exhaustive_parts = []
    if two_pool:
        candidate_bound = int(pool_a.size) * int(pool_b.size)
    else:
        candidate_bound = int(pool_a.size) * (int(pool_a.size) - 1) // 2
    exhaustive = candidate_bound <= impostor_cap

    block = 2048
    other = pool_b if two_pool else pool_a
    for lo in range(0, pool_a.size, block):
        sub = pool_a[lo : lo + block]
        genuine_parts.append(
            _pair_block(
                cols, sub, other, age_gap,
                same_identity=True, shared_pool=not two_pool,
            )
        )
        if exhaustive:
            impostor_exhaustive_parts.append(
                _pair_block(
                    cols, sub, other, age_gap,
                    same_identity=False, shared_pool=not two_pool,
                )
            )
    genuine = _canonical_pairs(
        np.concatenate(genuine_parts)
        if genuine_parts
        else np.empty((0, 2), dtype=np.int64)
    )
    if exhaustive:
        impostor = _canonical_pairs(
            np.concatenate(impostor_exhaustive_parts)
            if impostor_exhaustive_parts
            else np.empty((0, 2), dtype=np.int64)
        )
    else:
        impostor = _sample_impostors(
            cols, pool_a, pool_b, age_gap, impostor_cap, seed
        )
    return PairProtocol(slice_name=slice_name, genuine=genuine, impostor=impostor)


def _sample_impostors(
    cols: _Faces,
    pool_a: np.ndarray,
    pool_b: np.ndarray | None,
    age_gap: int,
    cap: int,
    seed: int,
) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    seen: set[tuple[int, int]] = set()
    out = np.empty((cap, 2), dtype=np.int64)
    found = 0
    attempts = 0
    max_attempts = cap * 20
    b_pool = pool_a if pool_b is None else pool_b
    while found < cap and attempts < max_attempts:
        take = min(65536, max_attempts - attempts)
        attempts += take
        ra = pool_a[rng.integers(0, pool_a.size, size=take)]
        rb = b_pool[rng.integers(0, b_pool.size, size=take)]
        ok = cols.identity[ra] != cols.identity[rb]
        if age_gap:
            ok &= np.abs(cols.age[ra] - cols.age[rb]) >= age_gap
        for a_row, b_row in zip(ra[ok], rb[ok]):
            fa, fb = int(cols.face_id[a_row]), int(cols.face_id[b_row])
            if fa > fb:
                fa, fb = fb, fa
            elif fa == fb:
                continue
            key = (fa, fb)
            if key in seen:
                continue
            seen.add(key)
            out[found, 0] = fa
            out[found, 1] = fb
            found += 1
            if found == cap:
                break
    return _canonical_pairs(out[:found].copy())


def score_protocol(
    corpus: Corpus, protocol: PairProtocol, *, workers: int = 1
) -> ScoreSet:
    """Cosine scores for a protocol straight from the corpus embeddings."""
    fids = sorted(corpus.faces)
    fid_arr = np.asarray(fids, dtype=np.int64)
    idx_arr = np.asarray(
        [corpus.faces[f].embedding_index for f in fids], dtype=np.int64
    )
    rows64 = corpus.store.rows.astype(np.float64)

    def score(pairs: np.ndarray) -> np.ndarray:
        if pairs.shape[0] == 0:
            return np.empty(0, dtype=np.float64)
        pa = np.searchsorted(fid_arr, pairs[:, 0])
        pb = np.searchsorted(fid_arr, pairs[:, 1])
        if (
            pa.max(initial=0) >= fid_arr.size
            or not np.array_equal(fid_arr[pa], pairs[:, 0])
            or pb.max(initial=0) >= fid_arr.size
            or not np.array_equal(fid_arr[pb], pairs[:, 1])
        ):
            raise ProtocolError("protocol references face_ids absent from corpus")
        chunks = [
            (lo, min(lo + 65536, pairs.shape[0]))
            for lo in range(0, pairs.shape[0], 65536)
        ]

        def one(bounds: tuple[int, int]) -> np.ndarray:
            lo, hi = bounds
            a = rows64[idx_arr[pa[lo:hi]]]
            b = rows64[idx_arr[pb[lo:hi]]]
            return np.einsum("ij,ij->i", a, b)

        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(one, chunks))
        else:
            parts = [one(c) for c in chunks]
        return np.clip(np.concatenate(parts), -1.0, 1.0)

    return ScoreSet(genuine=score(protocol.genuine), impostor=score(protocol.impostor))


def fnmr_at_fmr(scores: ScoreSet, target_fmr: float) -> tuple[float, float]:
    """FNMR at the most permissive threshold meeting the FMR target.

    The threshold is the smallest impostor score value at which the
    fraction of impostor scores at or above it stays within ``target_fmr``;
    when no impostor value qualifies, it is the next float above the top
    impostor score (zero measured FMR). FNMR is the fraction of genuine
    scores strictly below the threshold.
    """
    if not 0.0 < target_fmr <= 1.0:
        raise ValueError(f"target_fmr must be in (0, 1], got {target_fmr}")
    n_imp = scores.impostor.size
    n_gen = scores.genuine.size
    if n_gen == 0 or n_imp == 0:
        raise InsufficientPairsError("need at least one genuine and one impostor score")
    if n_imp * target_fmr < 1.0:
        raise InsufficientPairsError(
            f"cannot certify FMR <= {target_fmr:g} with {n_imp} impostor pairs "
            f"(need at least {math.ceil(1.0 / target_fmr)})"
        )
    imp = np.sort(scores.impostor)
    uniq = np.unique(imp)
    count_ge = n_imp - np.searchsorted(imp, uniq, side="left")
    feasible = count_ge / n_imp <= target_fmr
    if np.any(feasible):
        threshold = float(uniq[np.argmax(feasible)])
    else:
        threshold = float(np.nextafter(uniq[-1], np.inf))
    fnmr = float(np.count_nonzero(scores.genuine < threshold) / n_gen)
    return fnmr, threshold


def fairness_metrics(fnmr_by_group: dict[str, float]) -> GroupMetrics:
    """Average, population standard deviation, and max/min skewed-error
    ratio of per-group FNMRs."""
    if len(fnmr_by_group) < 2:
        raise FairnessError("fairness metrics need at least two groups")
    values = np.asarray(
        [fnmr_by_group[g] for g in sorted(fnmr_by_group)], dtype=np.float64
    )
    if np.any(values < 0.0):
        raise FairnessError("FNMR values must be non-negative")
    mn = float(values.min())
    if mn <= 0.0:
        raise FairnessError("SER undefined: the minimum group FNMR is zero")
    return GroupMetrics(
        fnmr_by_group=dict(sorted(fnmr_by_group.items())),
        avg=float(values.mean()),
        std=float(values.std()),
        ser=float(values.max() / mn),
    )


class Matcher:
    """Handle over the external matcher interface (pair file in, one
    similarity per line out)."""

    def score_pair_file(self, path: Path) -> list[float]:
        raise NotImplementedError


class CommandMatcher(Matcher):
    """Runs an external command per batch; the pair-file path is appended
    as the final argument and similarities are read from stdout."""

    def __init__(self, argv: list[str], timeout_s: float | None = None) -> None:
        if not argv:
            raise ValueError("empty matcher command")
        self.argv = list(argv)
        self.timeout_s = timeout_s

    def score_pair_file(self, path: Path) -> list[float]:
        try:
            proc = subprocess.run(
                self.argv + [str(path)],
                capture_output=True,
                text=True,
                timeout=self.timeout_s,
            )
        except subprocess.TimeoutExpired:
            raise MatcherError(
                f"matcher timed out after {self.timeout_s:.1f}s"
            ) from None
        except OSError as exc:
            raise MatcherError(f"cannot run matcher: {exc}") from exc
        if proc.returncode != 0:
            raise MatcherError(
                f"matcher exited with {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        lines = [ln for ln in proc.stdout.split("\n") if ln.strip()]
        try:
            return [float(ln) for ln in lines]
        except ValueError:
            raise MatcherError("matcher printed a non-numeric score line") from None


class EmbeddingMatcher(Matcher):
    """Scores pairs directly from corpus embeddings (in-process)."""

    def __init__(self, corpus: Corpus) -> None:
        self.corpus = corpus

    def score_pair_file(self, path: Path) -> list[float]:
        scores = []
        for a, b in _read_pair_file(path):
            va = self.corpus.row(a).astype(np.float64)
            vb = self.corpus.row(b).astype(np.float64)
            scores.append(float(np.dot(va, vb)))
        return scores


class SleepMatcher(Matcher):
    """In-process calibration matcher: sleeps a fixed time per batch and
    emits a constant score per pair."""

    def __init__(self, sleep_ms: float, score: float = 0.5) -> None:
        self.sleep_ms = sleep_ms
        self.score = score

    def score_pair_file(self, path: Path) -> list[float]:
        pairs = _read_pair_file(path)
        time.sleep(self.sleep_ms / 1000.0)
        return [self.score] * len(pairs)


def _read_pair_file(path: Path) -> list[tuple[int, int]]:
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        a, _, b = line.partition("\t")
        pairs.append((int(a), int(b)))
    return pairs


def write_pair_file(pairs: np.ndarray | list[tuple[int, int]], path: Path) -> None:
    rows = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in rows:
            fh.write(f"{a}\t{b}\n")


def score_with_matcher(
    matcher: Matcher,
    pairs: np.ndarray,
    *,
    batch_pairs: int = 10000,
    workdir: str | Path | None = None,
) -> np.ndarray:
    """Score an arbitrary pair array through a matcher handle, batched."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    out = np.empty(pairs.shape[0], dtype=np.float64)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        pair_file = Path(tmp) / "pairs.tsv"
        for lo in range(0, pairs.shape[0], batch_pairs):
            chunk = pairs[lo : lo + batch_pairs]
            write_pair_file(chunk, pair_file)
            scores = matcher.score_pair_file(pair_file)
            if len(scores) != chunk.shape[0]:
                raise MatcherError(
                    f"matcher returned {len(scores)} scores for "
                    f"{chunk.shape[0]} pairs"
                )
            out[lo : lo + chunk.shape[0]] = scores
    return out


@dataclass
class LatencyResult:
    track: str
    budget_ms: float
    flip: bool
    batch_size: int
    invocations: int
    median_ms_per_pair: float
    passed: bool


def measure_latency(
    matcher: Matcher,
    probe_pairs: int,
    budget: TimeBudget,
    *,
    pairs: np.ndarray | list[tuple[int, int]] | None = None,
    warmup: int = 5,
    min_invocations: int = 30,
    workdir: str | Path | None = None,
) -> LatencyResult:
    """Median wall-clock per pair over serial timed invocations.

    Runs ``warmup`` untimed invocations, then enough timed ones to cover
    ``probe_pairs`` (at least ``min_invocations``), each scoring one batch
    (two pairs under flip, one otherwise) on a single worker. Passes when
    the median per-pair time is within the budget. Any invocation slower
    than ten times the budget is a matcher failure.
    """
    if probe_pairs < 1:
        raise ValueError("probe_pairs must be >= 1")
    batch = budget.batch_size
    if pairs is None:
        pool = np.arange(2 * batch, dtype=np.int64).reshape(-1, 2)
    else:
        pool = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pool.shape[0] == 0:
            raise ValueError("empty probe pair list")
    invocations = max(min_invocations, math.ceil(probe_pairs / batch))
    limit_ms = 10.0 * budget.budget_ms
    per_pair_ms: list[float] = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        pair_file = Path(tmp) / "probe_pairs.tsv"
        cursor = 0
        for k in range(warmup + invocations):
            rows = pool[[(cursor + j) % pool.shape[0] for j in range(batch)]]
            cursor += batch
            write_pair_file(rows, pair_file)
            t0 = time.perf_counter()
            scores = matcher.score_pair_file(pair_file)
            elapsed_ms = (time.perf_counter() - t0) * 1000.0
            if len(scores) != batch:
                raise MatcherError(
                    f"matcher returned {len(scores)} scores for a "
                    f"{batch}-pair batch"
                )
            if elapsed_ms / batch > limit_ms:
                raise MatcherError(
                    f"matcher took {elapsed_ms / batch:.0f} ms per pair, over "
                    f"ten times the {budget.budget_ms:.0f} ms budget"
                )
            if k >= warmup:
                per_pair_ms.append(elapsed_ms / batch)
    median = float(statistics.median(per_pair_ms))
    return LatencyResult(
        track=budget.track,
        budget_ms=budget.budget_ms,
        flip=budget.flip,
        batch_size=batch,
        invocations=invocations,
        median_ms_per_pair=median,
        passed=median <= budget.budget_ms,
    )
