"""Propensity score matching of a test set into matched pairs and a remainder.

Privileged rows are visited in ascending row id.  For each one, the ``k``
nearest rows that are still unmatched are collected (ties by row id), and
the nearest unprivileged row among them that lies within the caliper
becomes its partner.  Matching is without replacement.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataio import Dataset


@dataclass(frozen=True)
class MatchConfig:
    k: int = 5
    caliper: float = 0.02
    distance_mode: str = "propensity"  # or "euclidean"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if not self.caliper >= 0:
            raise ValueError("caliper must be >= 0")
        if self.distance_mode not in ("propensity", "euclidean"):
            raise ValueError(f"unknown distance_mode {self.distance_mode!r}")


@dataclass(frozen=True, eq=False)
class PropensityScores:
    scores: np.ndarray
    row_ids: np.ndarray
    source: str = "logistic"


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]
    unmatched_ids: tuple[int, ...]
    distances: tuple[float, ...] = field(default=(), compare=False)

    @property
    def matched_ids(self) -> tuple[int, ...]:
        return tuple(sorted(i for pair in self.pairs for i in pair))

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def to_dict(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "unmatched": list(self.unmatched_ids)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MatchResult":
        return cls(
            pairs=tuple((int(a), int(b)) for a, b in d["pairs"]),
            unmatched_ids=tuple(int(i) for i in d["unmatched"]),
        )


def propensity_scores(model, test: Dataset, source: str = "logistic") -> PropensityScores:
    return PropensityScores(
        scores=np.asarray(model.predict_proba(test.features), dtype=float),
        row_ids=np.asarray(test.row_ids, dtype=np.int64),
        source=source,
    )


def _k_nearest_sorted(i, pos_of, s_sorted, ids_sorted, prev, nxt, k):
    """k nearest live neighbours of row ``i`` on the 1-d score line.

    ``prev``/``nxt`` form a doubly linked list over the sorted order holding
    only unmatched rows.  Candidates at the k-th distance are all gathered so
    the row-id tie-break is exact.
    """
    here = pos_of[i]
    x = s_sorted[here]
    left, right = prev[here], nxt[here]
    found: list[tuple[float, int]] = []
    kth = None
    while left >= 0 or right >= 0:
        dl = x - s_sorted[left] if left >= 0 else np.inf
        dr = s_sorted[right] - x if right >= 0 else np.inf
        d = min(dl, dr)
        if kth is not None and d > kth:
            break
        if dl <= dr:
            found.append((dl, left))
            left = prev[left]
        else:
            found.append((dr, right))
            right = nxt[right]
        if kth is None and len(found) >= k:
            kth = d
    found.sort(key=lambda c: (c[0], ids_sorted[c[1]]))
    return found[:k]


def match(
    scores: PropensityScores | np.ndarray,
    pa: Sequence[int],
    cfg: Optional[MatchConfig] = None,
    row_ids: Optional[Sequence[int]] = None,
    features: Optional[np.ndarray] = None,
) -> MatchResult:
    """Greedy one-to-one matching of privileged to unprivileged rows.

    ``features`` is required for ``distance_mode="euclidean"``; distances
    are then Euclidean in feature space and the caliper is in those units.
    """
    cfg = cfg or MatchConfig()
    if isinstance(scores, PropensityScores):
        s = np.asarray(scores.scores, dtype=float)
        ids = np.asarray(scores.row_ids if row_ids is None else row_ids, dtype=np.int64)
    else:
        s = np.asarray(scores, dtype=float)
        ids = np.arange(len(s), dtype=np.int64) if row_ids is None else np.asarray(row_ids, dtype=np.int64)
    g = np.asarray(pa, dtype=np.int8)
    n = len(s)
    if not (len(g) == len(ids) == n):
        raise ValueError("scores, pa and row ids must be aligned")
    if len(np.unique(ids)) != n:
        raise ValueError("row ids must be unique")
    if not np.all(np.isfinite(s)):
        raise ValueError("propensity scores must be finite")

    pairs: list[tuple[int, int]] = []
    dists: list[float] = []
    matched = np.zeros(n, dtype=bool)
    treated = np.flatnonzero(g == 1)
    treated = treated[np.argsort(ids[treated], kind="stable")]

    if cfg.distance_mode == "propensity":
        order = np.lexsort((ids, s))
        pos_of = np.empty(n, dtype=np.int64)
        pos_of[order] = np.arange(n)
        s_sorted, ids_sorted = s[order], ids[order]
        prev = np.arange(-1, n - 1)
        nxt = np.arange(1, n + 1)
        nxt[-1:] = -1

        def unlink(p):
            a, b = prev[p], nxt[p]
            if a >= 0:
                nxt[a] = b
            if b >= 0:
                prev[b] = a

        for i in treated:
            if matched[i]:
                continue
            for d, p in _k_nearest_sorted(i, pos_of, s_sorted, ids_sorted, prev, nxt, cfg.k):
                j = int(order[p])
                if g[j] == 0 and d <= cfg.caliper:
                    matched[i] = matched[j] = True
                    unlink(pos_of[i])
                    unlink(p)
                    pairs.append((int(ids[i]), int(ids[j])))
                    dists.append(float(d))
                    break
    else:
        if features is None:
            raise ValueError("euclidean matching needs the feature matrix")
        X = np.asarray(features, dtype=float)
        if X.shape[0] != n:
            raise ValueError("features must align with scores")
        sq = np.einsum("ij,ij->i", X, X)
        for i in treated:
            if matched[i]:
                continue
            live = np.flatnonzero(~matched)
            live = live[live != i]
            if len(live) == 0:
                break
            d2 = sq[live] - 2.0 * X[live] @ X[i] + sq[i]
            d = np.sqrt(np.maximum(d2, 0.0))
            nearest = np.lexsort((ids[live], d))[: cfg.k]
            for q in nearest:
                j = int(live[q])
                if g[j] == 0 and d[q] <= cfg.caliper:
                    matched[i] = matched[j] = True
                    pairs.append((int(ids[i]), int(ids[j])))
                    dists.append(float(d[q]))
                    break

    unmatched = tuple(sorted(int(x) for x in ids[~matched]))
    return MatchResult(pairs=tuple(pairs), unmatched_ids=unmatched, distances=tuple(dists))


def match_dataset(model, test: Dataset, cfg: Optional[MatchConfig] = None) -> MatchResult:
    cfg = cfg or MatchConfig()
    ps = propensity_scores(model, test)
    return match(ps, test.pa, cfg, features=test.features if cfg.distance_mode == "euclidean" else None)


def matched_ratio(result: MatchResult, test_size: int) -> float:
    if test_size <= 0:
        raise ValueError("test_size must be positive")
    return 2 * result.n_pairs / test_size
