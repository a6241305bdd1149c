"""Cost-matrix construction for detection/tracklet matching and an exact
minimum-cost Hungarian solver.

The matching problem is padded to a square: ``n = max(#detections, #active
tracklets)``. Padded rows stand for phantom detections, padded columns for
the empty tracklet; every entry touching padding is exactly 0, so surplus
detections can be routed to "no tracklet" at zero cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import BoxCostWeights, box_cost
from .validation import check_nonnegative, check_same_length, check_square_matrix


@dataclass(frozen=True)
class MatchWeights:
    """Weights of the composite matching cost plus the rejection threshold.

    A matched pair is rejected (and the detection starts a new tracklet) when
    the class-distribution cosine similarity and feature cosine similarity
    are both below ``reject_threshold``.
    """

    feat_weight: float = 2.0
    box: BoxCostWeights = field(default_factory=BoxCostWeights)
    reject_threshold: float = 0.5

    def __post_init__(self):
        check_nonnegative(self.feat_weight, "feat_weight")
        if not np.isfinite(self.reject_threshold):
            raise ValueError("reject_threshold must be finite")


@dataclass
class CostMatrix:
    """Square padded cost matrix with masks marking padded rows/columns."""

    entries: np.ndarray
    dummy_row_mask: np.ndarray  # True where the row is a phantom detection
    dummy_col_mask: np.ndarray  # True where the column is the empty tracklet

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class Assignment:
    """A permutation: row i is assigned to column perm[i]."""

    perm: tuple[int, ...]
    total_cost: float


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity with cos := 0 whenever either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    check_same_length(u, v)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def cosine_cost(u: np.ndarray, v: np.ndarray, weight: float = 1.0) -> float:
    """weight * (1 - cos(u, v)); zero-norm inputs get the maximal cost."""
    check_nonnegative(weight, "weight")
    return weight * (1.0 - cosine_similarity(u, v))


def build_cost_matrix(dets, tracks, weights: MatchWeights) -> CostMatrix:
    """Pad detections and tracklet summaries to a square matrix of pairwise
    matching costs.

    ``dets`` need ``class_dist``, ``feature`` and ``box`` attributes;
    ``tracks`` need ``avg_class_dist``, ``avg_feature`` and ``last_box``.
    """
    n = max(len(dets), len(tracks))
    entries = np.zeros((n, n), dtype=np.float64)
    dummy_rows = np.arange(n) >= len(dets)
    dummy_cols = np.arange(n) >= len(tracks)
    for i, det in enumerate(dets):
        for j, trk in enumerate(tracks):
            entries[i, j] = (
                cosine_cost(det.class_dist, trk.avg_class_dist, 1.0)
                + cosine_cost(det.feature, trk.avg_feature, weights.feat_weight)
                + box_cost(det.box, trk.last_box, weights.box)
            )
    return CostMatrix(entries=entries, dummy_row_mask=dummy_rows, dummy_col_mask=dummy_cols)


def _solve_min_cost(a: np.ndarray) -> tuple[list[int], float]:
    """Shortest-augmenting-path Hungarian on a square matrix, O(n^3).

    Returns (perm, cost) where perm[i] is the column assigned to row i.
    Deterministic for a given input but with no tie-break guarantee.
    """
    n = a.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            row = a[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = [0] * n
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    cost = float(sum(a[i, perm[i]] for i in range(n)))
    return perm, cost


def hungarian(cost) -> Assignment:
    """Exact minimum-cost assignment on a square matrix.

    Accepts a :class:`CostMatrix` or any square array-like. Among permutations
    of equal (minimal) cost the lexicographically smallest one, read row by
    row, is returned, so results are reproducible across runs.
    """
    a = cost.entries if isinstance(cost, CostMatrix) else cost
    a = check_square_matrix(a, "cost matrix")
    n = a.shape[0]
    if n == 0:
        return Assignment(perm=(), total_cost=0.0)
    _, best = _solve_min_cost(a)
    tol = 1e-9 * (1.0 + abs(best))

    # Fix rows one by one: for each row take the smallest column that still
    # admits an optimal completion (verified by re-solving the remainder).
    perm: list[int] = []
    free_cols = list(range(n))
    remaining = best
    for r in range(n):
        rows_left = list(range(r + 1, n))
        picked = -1
        for j in free_cols:
            cols_left = [c for c in free_cols if c != j]
            sub_cost = 0.0
            if rows_left:
                sub = a[np.ix_(rows_left, cols_left)]
                _, sub_cost = _solve_min_cost(sub)
            if a[r, j] + sub_cost <= remaining + tol:
                picked = j
                remaining -= a[r, j]
                break
        assert picked >= 0, "no optimal completion found (numerical issue)"
        perm.append(picked)
        free_cols.remove(picked)
    total = float(sum(a[i, perm[i]] for i in range(n)))
    return Assignment(perm=tuple(perm), total_cost=total)
