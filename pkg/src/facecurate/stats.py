"""Per-stage bookkeeping: counts and similarity histograms."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from facecurate.errors import ConsistencyError

HIST_BINS = 100
HIST_RANGE = (-1.0, 1.0)


def bin_edges() -> np.ndarray:
    return np.linspace(HIST_RANGE[0], HIST_RANGE[1], HIST_BINS + 1)


def similarity_histogram(values: np.ndarray) -> np.ndarray:
    """100-bin integer histogram over [-1, 1].

    Values are clamped into the range first, so the bin mass always equals
    the number of input values exactly.
    """
    v = np.clip(np.asarray(values, dtype=np.float64).ravel(), *HIST_RANGE)
    hist, _ = np.histogram(v, bins=HIST_BINS, range=HIST_RANGE)
    return hist.astype(np.int64)


def histogram_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Overlap integral of two histograms: sum of per-bin minimum mass
    after each histogram is normalized to total mass 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ta, tb = a.sum(), b.sum()
    if ta == 0.0 or tb == 0.0:
        return 0.0
    return float(np.minimum(a / ta, b / tb).sum())


@dataclass
class StageStats:
    """Counts before/after one pipeline stage, with optional similarity
    histograms of the stage's output corpus."""

    stage: str
    identities_before: int
    identities_after: int
    faces_before: int
    faces_after: int
    intra_hist: np.ndarray | None = None
    inter_hist: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.identities_after > self.identities_before:
            raise ConsistencyError(
                f"stage {self.stage}: identity count grew "
                f"({self.identities_before} -> {self.identities_after})"
            )
        if self.faces_after > self.faces_before:
            raise ConsistencyError(
                f"stage {self.stage}: face count grew "
                f"({self.faces_before} -> {self.faces_after})"
            )


def write_stage_stats(stages: list[StageStats], path: str | Path) -> None:
    lines = ["stage\tidentities_before\tidentities_after\tfaces_before\tfaces_after"]
    for st in stages:
        lines.append(
            f"{st.stage}\t{st.identities_before}\t{st.identities_after}"
            f"\t{st.faces_before}\t{st.faces_after}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_histogram_csv(hist: np.ndarray, path: str | Path) -> None:
    edges = bin_edges()
    lines = ["bin_lo,bin_hi,count"]
    for k in range(HIST_BINS):
        lines.append(f"{edges[k]:.2f},{edges[k + 1]:.2f},{int(hist[k])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_stage_histograms(stages: list[StageStats], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for st in stages:
        if st.intra_hist is not None:
            write_histogram_csv(st.intra_hist, directory / f"{st.stage}_intra.csv")
        if st.inter_hist is not None:
            write_histogram_csv(st.inter_hist, directory / f"{st.stage}_inter.csv")
