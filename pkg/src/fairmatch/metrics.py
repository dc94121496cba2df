"""Confusion-matrix performance scores, group fairness scores and GD.

All reported scores live on a 0-100 scale.  Fairness scores are absolute
deviations from parity, so smaller is better and 0 is perfect.  A score
whose denominator is empty is reported as ``None``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

PERFORMANCE = ("accuracy", "precision", "recall", "f1")
FAIRNESS = ("aod", "eod", "spd", "di")
ALL_METRICS = PERFORMANCE + FAIRNESS
OPTIMAL = {**{m: 100.0 for m in PERFORMANCE}, **{m: 0.0 for m in FAIRNESS}}


class DegenerateGroupError(ValueError):
    """A protected group has no rows in the evaluated set."""


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class GroupRates:
    tpr_p: Optional[float]
    fpr_p: Optional[float]
    tpr_u: Optional[float]
    fpr_u: Optional[float]
    fav_rate_p: float
    fav_rate_u: float


@dataclass(frozen=True)
class MetricReport:
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    aod: Optional[float]
    eod: Optional[float]
    spd: Optional[float]
    di: Optional[float]
    n: int = 0

    def get(self, metric: str) -> Optional[float]:
        return getattr(self, metric)

    @property
    def undefined(self) -> tuple[str, ...]:
        return tuple(m for m in ALL_METRICS if getattr(self, m) is None)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{f.name: d.get(f.name) for f in fields(cls)})

    def csv_row(self) -> list:
        return [_fmt(self.get(m)) for m in ALL_METRICS]

    def rounded(self) -> dict:
        return {m: round_half_away(self.get(m)) for m in ALL_METRICS}

    def gd(self, metrics: Sequence[str] = ALL_METRICS) -> Optional[float]:
        values = [(self.get(m), OPTIMAL[m]) for m in metrics if self.get(m) is not None]
        if not values:
            return None
        return generational_distance(MetricVector([v for v, _ in values], [o for _, o in values]))


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def round_half_away(x: Optional[float]) -> Optional[int]:
    if x is None:
        return None
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _binary(v, name: str) -> np.ndarray:
    a = np.asarray(v)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if a.size and not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1")
    return a.astype(np.int8)


def confusion(y_true, y_pred) -> ConfusionMatrix:
    t, p = _binary(y_true, "y_true"), _binary(y_pred, "y_pred")
    if len(t) != len(p):
        raise ValueError(f"length mismatch: {len(t)} labels vs {len(p)} predictions")
    if len(t) == 0:
        raise ValueError("need at least one row")
    return ConfusionMatrix(
        tp=int(np.sum((t == 1) & (p == 1))),
        fp=int(np.sum((t == 0) & (p == 1))),
        tn=int(np.sum((t == 0) & (p == 0))),
        fn=int(np.sum((t == 1) & (p == 0))),
    )


def _ratio(num: float, den: float) -> Optional[float]:
    return None if den == 0 else num / den


def performance_metrics(cm: ConfusionMatrix) -> tuple[Optional[float], ...]:
    """(accuracy, precision, recall, f1) on the 0-100 scale."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    acc = 100.0 * (cm.tp + cm.tn) / cm.total
    prec = _ratio(cm.tp, cm.tp + cm.fp)
    rec = _ratio(cm.tp, cm.tp + cm.fn)
    if prec is None or rec is None:
        f1 = None
    elif prec + rec == 0:
        f1 = 0.0
    else:
        f1 = 100.0 * 2 * prec * rec / (prec + rec)
    return (
        acc,
        None if prec is None else 100.0 * prec,
        None if rec is None else 100.0 * rec,
        f1,
    )


def group_rates(y_true, y_pred, pa) -> GroupRates:
    t, p, g = _binary(y_true, "y_true"), _binary(y_pred, "y_pred"), _binary(pa, "pa")
    if not (len(t) == len(p) == len(g)):
        raise ValueError("y_true, y_pred and pa must be aligned")
    out = {}
    for name, grp in (("p", 1), ("u", 0)):
        m = g == grp
        if not m.any():
            raise DegenerateGroupError(f"no rows with pa={grp}")
        pos, neg = m & (t == 1), m & (t == 0)
        out[f"tpr_{name}"] = _ratio(float(np.sum(p[pos] == 1)), float(pos.sum()))
        out[f"fpr_{name}"] = _ratio(float(np.sum(p[neg] == 1)), float(neg.sum()))
        out[f"fav_rate_{name}"] = float(np.mean(p[m] == 1))
    return GroupRates(**out)


def fairness_from_rates(r: GroupRates) -> tuple[Optional[float], ...]:
    """(aod, eod, spd, di) as absolute deviations times 100."""
    eod_signed = None if r.tpr_u is None or r.tpr_p is None else r.tpr_u - r.tpr_p
    fpr_gap = None if r.fpr_u is None or r.fpr_p is None else r.fpr_u - r.fpr_p
    aod_signed = None if eod_signed is None or fpr_gap is None else (fpr_gap + eod_signed) / 2.0
    spd_signed = r.fav_rate_u - r.fav_rate_p
    di_ratio = _ratio(r.fav_rate_u, r.fav_rate_p)
    return (
        None if aod_signed is None else 100.0 * abs(aod_signed),
        None if eod_signed is None else 100.0 * abs(eod_signed),
        100.0 * abs(spd_signed),
        None if di_ratio is None else 100.0 * abs(1.0 - di_ratio),
    )


def group_fairness(y_true, y_pred, pa) -> tuple[tuple[Optional[float], ...], GroupRates]:
    rates = group_rates(y_true, y_pred, pa)
    return fairness_from_rates(rates), rates


def evaluate(y_true, y_pred, pa) -> MetricReport:
    perf = performance_metrics(confusion(y_true, y_pred))
    fair, _ = group_fairness(y_true, y_pred, pa)
    return MetricReport(*perf, *fair, n=len(np.asarray(y_true)))


@dataclass(frozen=True)
class MetricVector:
    values: Sequence[float]
    optimal: Sequence[float]


def generational_distance(mv: MetricVector) -> float:
    if len(mv.values) != len(mv.optimal):
        raise ValueError("values and optimal must have the same length")
    if len(mv.values) == 0:
        raise ValueError("need at least one metric")
    diffs = np.asarray(mv.values, dtype=float) - np.asarray(mv.optimal, dtype=float)
    return float(np.sum(np.sqrt(diffs**2)) / len(diffs))
