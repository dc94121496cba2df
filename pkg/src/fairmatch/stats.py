"""Welch t-test, Cliff's delta and Scott-Knott ranking of treatments."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import betainc

NEGLIGIBLE_DELTA = 0.147


# --------------------------------------------------------------------------
# Welch's t-test

def t_two_sided_pvalue(t, df):
    """P(|T| > |t|) for Student's t with ``df`` degrees of freedom.

    Uses the identity P = I_{df/(df+t^2)}(df/2, 1/2) with the regularised
    incomplete beta function.  Works elementwise on arrays.
    """
    t = np.asarray(t, dtype=float)
    df = np.asarray(df, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = df / (df + t * t)
        p = betainc(df / 2.0, 0.5, x)
    p = np.where(np.isinf(t), 0.0, p)
    return np.clip(p, 0.0, 1.0)


def welch_from_moments(mean_a, var_a, n_a, mean_b, var_b, n_b):
    """Vectorised Welch statistic, Welch-Satterthwaite df and two-sided p.

    Degenerate cells with both variances zero follow the convention
    p = 1 for equal means and p = 0 otherwise.
    """
    mean_a, var_a, mean_b, var_b = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mean_a, var_a, mean_b, var_b))
    )
    va, vb = var_a / n_a, var_b / n_b
    se2 = va + vb
    diff = mean_a - mean_b
    degenerate = se2 <= 0
    safe = np.where(degenerate, 1.0, se2)
    t = diff / np.sqrt(safe)
    df_den = np.where(degenerate, 1.0, va**2 / (n_a - 1) + vb**2 / (n_b - 1))
    df = np.where(degenerate, np.nan, se2**2 / df_den)
    p = t_two_sided_pvalue(t, np.where(degenerate, 1.0, df))
    same = diff == 0
    t = np.where(degenerate, np.where(same, 0.0, np.copysign(np.inf, diff)), t)
    p = np.where(degenerate, np.where(same, 1.0, 0.0), p)
    return t, df, p


def welch_ttest(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, float]:
    """Two-sided Welch two-sample t-test; returns (t, df, p)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("samples must be finite")
    t, df, p = welch_from_moments(a.mean(), a.var(ddof=1), len(a), b.mean(), b.var(ddof=1), len(b))
    return float(t), float(df), float(p)


# --------------------------------------------------------------------------
# Cliff's delta

@dataclass(frozen=True)
class EffectSize:
    delta: float

    @property
    def magnitude(self) -> str:
        return "non-negligible" if abs(self.delta) >= NEGLIGIBLE_DELTA else "negligible"

    @property
    def non_negligible(self) -> bool:
        return abs(self.delta) >= NEGLIGIBLE_DELTA


def cliffs_delta(a: Sequence[float], b: Sequence[float]) -> EffectSize:
    """(#{a_i > b_j} - #{a_i < b_j}) / (|a| |b|), counted by binary search."""
    a = np.asarray(a, dtype=float)
    b = np.sort(np.asarray(b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    less = np.searchsorted(b, a, side="left")  # b_j < a_i
    greater = len(b) - np.searchsorted(b, a, side="right")  # b_j > a_i
    return EffectSize(float((less.sum() - greater.sum()) / (len(a) * len(b))))


# --------------------------------------------------------------------------
# Scott-Knott

@dataclass(frozen=True)
class SplitEvaluation:
    split_index: int
    e_delta: float


@dataclass(frozen=True)
class RankTable:
    ranks: dict[str, int]
    medians: dict[str, float]
    smaller_is_better: bool
    order: tuple[str, ...] = ()

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["treatment", "median", "rank"])
        for name in self.order or sorted(self.ranks):
            w.writerow([name, repr(self.medians[name]), self.ranks[name]])
        return out.getvalue()


def expected_delta(pooled: Sequence[np.ndarray], split: int) -> float:
    """E(Delta) for cutting the median-sorted list before position ``split``.

    |l| counts observations, E() is the arithmetic mean of all observations
    in a sub-list.
    """
    left = np.concatenate(pooled[:split])
    right = np.concatenate(pooled[split:])
    whole = np.concatenate(pooled)
    mu = whole.mean()
    n = len(whole)
    return float(
        len(left) / n * abs(left.mean() - mu) ** 2 + len(right) / n * abs(right.mean() - mu) ** 2
    )


def best_split(pooled: Sequence[np.ndarray]) -> SplitEvaluation:
    """Leftmost arg-max of E(Delta) over split positions 1..len-1."""
    best = SplitEvaluation(0, -np.inf)
    for i in range(1, len(pooled)):
        e = expected_delta(pooled, i)
        if e > best.e_delta:
            best = SplitEvaluation(i, e)
    return best


def scott_knott(groups: Mapping[str, Sequence[float]], smaller_is_better: bool = False) -> RankTable:
    """Rank treatments; rank 1 is best, equal ranks mean statistically merged.

    Treatments are sorted best-first by median (ties by name).  The split
    maximising E(Delta) is kept when Cliff's delta between the pooled sides
    is non-negligible; kept splits are recursed into.
    """
    if not groups:
        raise ValueError("need at least one treatment")
    data = {}
    for name, vals in groups.items():
        v = np.asarray(vals, dtype=float)
        if len(v) == 0:
            raise ValueError(f"treatment {name!r} has no observations")
        data[name] = v
    medians = {k: float(np.median(v)) for k, v in data.items()}
    sign = 1.0 if smaller_is_better else -1.0
    names = sorted(data, key=lambda k: (sign * medians[k], k))

    leaves: list[list[str]] = []

    def recurse(block: list[str]):
        if len(block) > 1:
            pooled = [data[k] for k in block]
            cut = best_split(pooled)
            left, right = np.concatenate(pooled[: cut.split_index]), np.concatenate(pooled[cut.split_index:])
            if cliffs_delta(left, right).non_negligible:
                recurse(block[: cut.split_index])
                recurse(block[cut.split_index:])
                return
        leaves.append(block)

    recurse(names)
    ranks = {name: r for r, leaf in enumerate(leaves, start=1) for name in leaf}
    return RankTable(ranks=ranks, medians=medians, smaller_is_better=smaller_is_better, order=tuple(names))
