"""Prototype-uniqueness diagnostics on the unit sphere.

A set of unit prototypes is partitioned greedily: scanning rows in order,
each prototype joins the first existing representative v with
1 - v.c < epsilon, otherwise it opens a new partition.  The number of
partitions M is the unique-prototype count.  Greedy first-fit is an
upper-bound heuristic for the minimal covering, chosen for determinism and
O(K*M*D) cost.  At epsilon 0 every prototype counts as unique.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mixture import StateError

# above this many prototypes the pairwise-angle histogram subsamples pairs
ANGLE_PAIR_K_CAP = 10_000
_ANGLE_PAIR_BUDGET = 2_000_000
_ANGLE_SEED = 1234


@dataclass
class PrototypeMatrix:
    """K x D prototype rows plus a flag recording row normalization."""

    rows: np.ndarray
    normalized: bool = False

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass
class CollapseReport:
    epsilon: float
    unique_count: int
    unique_fraction: float
    partition_sizes: list[int]
    representative_indices: list[int]


@dataclass
class AngularStats:
    min_deg: float
    mean_deg: float
    hist_counts: np.ndarray
    hist_edges_deg: np.ndarray
    n_pairs_total: int
    n_pairs_used: int
    subsampled: bool


def normalize_rows(matrix: np.ndarray | PrototypeMatrix) -> PrototypeMatrix:
    """Divide every row by its L2 norm; zero rows are rejected by index."""
    rows = matrix.rows if isinstance(matrix, PrototypeMatrix) else matrix
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError(f"expected a non-empty 2-d matrix, got shape {rows.shape}")
    norms = np.linalg.norm(rows, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"row {int(zero[0])} has zero norm")
    return PrototypeMatrix(rows / norms[:, None], normalized=True)


def count_unique(protos: PrototypeMatrix, epsilon: float) -> CollapseReport:
    """Greedy epsilon-ball partition count in row-index order."""
    if not isinstance(protos, PrototypeMatrix) or not protos.normalized:
        raise StateError("count_unique requires a normalized PrototypeMatrix")
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    rows = protos.rows
    k = rows.shape[0]
    rep_indices: list[int] = []
    assignment = np.empty(k, dtype=np.int64)
    rep_block = np.empty((0, rows.shape[1]))
    for i in range(k):
        if rep_indices:
            sims = rep_block @ rows[i]
            # clip float overshoot above 1 so identical rows never merge at eps=0
            np.minimum(sims, 1.0, out=sims)
            hits = np.flatnonzero(1.0 - sims < epsilon)
        else:
            hits = np.empty(0, dtype=np.int64)
        if hits.size:
            assignment[i] = hits[0]
        else:
            assignment[i] = len(rep_indices)
            rep_indices.append(i)
            rep_block = np.vstack([rep_block, rows[i]])
    m = len(rep_indices)
    sizes = np.bincount(assignment, minlength=m)
    return CollapseReport(
        epsilon=float(epsilon),
        unique_count=m,
        unique_fraction=m / k,
        partition_sizes=[int(s) for s in sizes],
        representative_indices=rep_indices,
    )


def epsilon_sweep(protos: PrototypeMatrix, epsilons) -> list[CollapseReport]:
    """One report per epsilon; the list must be sorted ascending."""
    eps = [float(e) for e in epsilons]
    if not eps:
        raise ValueError("epsilon list is empty")
    if any(e < 0.0 for e in eps):
        raise ValueError("epsilons must be non-negative")
    if any(b < a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be sorted ascending")
    return [count_unique(protos, e) for e in eps]


DEFAULT_EPSILON_GRID = (0.0, 0.025, 0.05, 0.1, 0.25, 0.5)


def angular_stats(protos: PrototypeMatrix, bins: int = 180,
                  pair_k_cap: int = ANGLE_PAIR_K_CAP) -> AngularStats:
    """Histogram of pairwise angles in degrees, plus min and mean.

    All K(K-1)/2 pairs are used up to ``pair_k_cap`` prototypes; beyond that
    a fixed-seed uniform subsample of pairs keeps the cost bounded.
    """
    if not isinstance(protos, PrototypeMatrix) or not protos.normalized:
        raise StateError("angular_stats requires a normalized PrototypeMatrix")
    k = protos.k
    if k < 2:
        raise ValueError("angular statistics need at least two prototypes")
    rows = protos.rows
    n_total = k * (k - 1) // 2
    subsampled = k > pair_k_cap
    if subsampled:
        rng = np.random.default_rng(_ANGLE_SEED)
        i = rng.integers(0, k, size=_ANGLE_PAIR_BUDGET)
        j = rng.integers(0, k - 1, size=_ANGLE_PAIR_BUDGET)
        j = np.where(j >= i, j + 1, j)
        dots = np.einsum("ij,ij->i", rows[i], rows[j])
        angles = np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))
    else:
        chunks = []
        block = 512
        for start in range(0, k - 1, block):
            stop = min(start + block, k - 1)
            dots = rows[start:stop] @ rows.T
            for local, i in enumerate(range(start, stop)):
                chunks.append(dots[local, i + 1:])
        dots = np.concatenate(chunks)
        angles = np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))
    counts, edges = np.histogram(angles, bins=bins, range=(0.0, 180.0))
    return AngularStats(
        min_deg=float(angles.min()),
        mean_deg=float(angles.mean()),
        hist_counts=counts,
        hist_edges_deg=edges,
        n_pairs_total=n_total,
        n_pairs_used=int(angles.size),
        subsampled=subsampled,
    )


def write_reports_csv(reports: list[CollapseReport], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("epsilon,unique_count,unique_fraction\n")
        for r in reports:
            fh.write(f"{r.epsilon:.17g},{r.unique_count},{r.unique_fraction:.17g}\n")


def write_angular_csv(stats: AngularStats, path: str | Path) -> None:
    centers = 0.5 * (stats.hist_edges_deg[:-1] + stats.hist_edges_deg[1:])
    with open(path, "w") as fh:
        fh.write("angle_deg,count\n")
        for c, n in zip(centers, stats.hist_counts):
            fh.write(f"{c:.17g},{int(n)}\n")
