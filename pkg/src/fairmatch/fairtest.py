"""Controlled fairness testing on a matched/unmatched decomposition.

A fairness curve tracks one fairness score as a growing share of the
unmatched rows is added back to the matched rows.  For each seed the
unmatched rows are permuted once and prefixes of that permutation are used,
so evaluation sets are nested along the grid.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataio import Dataset, SplitPair, make_rng
from .metrics import ALL_METRICS, PERFORMANCE, DegenerateGroupError, MetricReport, evaluate
from .psm import MatchConfig, MatchResult, match, matched_ratio, propensity_scores
from .sampling import DegenerateSampleError, SAMPLERS
from .thresholds import default_predict

SUBSETS = ("psm_matched", "class_sampled", "pa_sampled", "wae_sampled", "original")
_SAMPLER_OF = {"class_sampled": "class_based", "pa_sampled": "pa_based", "wae_sampled": "wae"}
DEFAULT_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


class UndefinedPointWarning(UserWarning):
    pass


def _safe_evaluate(y, yhat, pa) -> Optional[MetricReport]:
    if len(y) == 0:
        return None
    try:
        return evaluate(y, yhat, pa)
    except DegenerateGroupError:
        return None


def trapezoid(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


@dataclass(frozen=True, eq=False)
class FairnessCurve:
    metric: str
    fractions: np.ndarray
    per_seed_values: np.ndarray  # seeds x fractions, NaN where undefined
    mean: np.ndarray
    std: np.ndarray
    f_auc: Optional[float]
    seeds: tuple[int, ...] = ()

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["fraction", "mean", "std"] + [f"seed_{s}" for s in self.seeds])
        for k, f in enumerate(self.fractions):
            row = [repr(float(f)), _num(self.mean[k]), _num(self.std[k])]
            row += [_num(v) for v in self.per_seed_values[:, k]]
            w.writerow(row)
        return out.getvalue()

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "fractions": [float(f) for f in self.fractions],
            "per_seed_values": [[_maybe(v) for v in row] for row in self.per_seed_values],
            "mean": [_maybe(v) for v in self.mean],
            "std": [_maybe(v) for v in self.std],
            "f_auc": self.f_auc,
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FairnessCurve":
        def arr(x):
            return np.array(x, dtype=float)  # None -> nan

        return cls(
            d["metric"], arr(d["fractions"]), arr(d["per_seed_values"]).reshape(len(d["seeds"]), -1),
            arr(d["mean"]), arr(d["std"]), d["f_auc"], tuple(int(s) for s in d["seeds"]),
        )


def _maybe(v) -> Optional[float]:
    v = float(v)
    return None if math.isnan(v) else v


def _num(v) -> str:
    if v is None or math.isnan(float(v)):
        return ""
    return repr(float(v))


def fairness_curve(
    model,
    test: Dataset,
    match_result: MatchResult,
    metric_id: str = "di",
    grid: Sequence[float] = DEFAULT_GRID,
    n_seeds: int = 20,
    base_seed: int = 0,
    predictions: Optional[np.ndarray] = None,
) -> FairnessCurve:
    """Fairness score vs. fraction of unmatched rows included.

    ``predictions`` overrides the default ``score > 0.5`` labels from
    ``model`` (e.g. to trace a mitigated classifier).
    """
    if metric_id not in ALL_METRICS:
        raise ValueError(f"unknown metric {metric_id!r}")
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    fr = np.asarray(grid, dtype=float)
    if fr.size < 2 or fr[0] != 0.0 or fr[-1] != 1.0 or np.any(np.diff(fr) <= 0):
        raise ValueError("grid must increase strictly from 0 to 1")
    yhat = default_predict(model.predict_proba(test.features)) if predictions is None else np.asarray(predictions)
    matched_pos = test.positions_of(match_result.matched_ids)
    unmatched_pos = test.positions_of(match_result.unmatched_ids)
    n_u = len(unmatched_pos)
    counts = [int(math.ceil(round(f * n_u, 9))) for f in fr]

    seeds = tuple(base_seed + s for s in range(n_seeds))
    values = np.full((n_seeds, len(fr)), np.nan)
    for si, seed in enumerate(seeds):
        perm = unmatched_pos[make_rng(seed).permutation(n_u)]
        for k, c in enumerate(counts):
            pos = np.concatenate([matched_pos, perm[:c]])
            rep = _safe_evaluate(test.labels[pos], yhat[pos], test.pa[pos])
            v = None if rep is None else rep.get(metric_id)
            if v is not None:
                values[si, k] = v

    return _summarise(metric_id, fr, values, seeds)


def _summarise(metric_id, fr, values, seeds) -> FairnessCurve:
    defined = ~np.all(np.isnan(values), axis=0)
    mean = np.full(len(fr), np.nan)
    std = np.full(len(fr), np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean[defined] = np.nanmean(values[:, defined], axis=0)
        std[defined] = np.nanstd(values[:, defined], axis=0)
    if not defined.all():
        warnings.warn(
            f"{metric_id} undefined at fractions {fr[~defined].tolist()}; f-AUC uses defined points only",
            UndefinedPointWarning,
            stacklevel=3,
        )
    f_auc = trapezoid(fr[defined], mean[defined]) if defined.sum() >= 2 else None
    return FairnessCurve(metric_id, fr, values, mean, std, f_auc, seeds)


def combine_curves(curves: Sequence[FairnessCurve]) -> FairnessCurve:
    """Stack the replicates of several curves (e.g. one per split) into one."""
    if not curves:
        raise ValueError("need at least one curve")
    first = curves[0]
    for c in curves[1:]:
        if c.metric != first.metric or not np.array_equal(c.fractions, first.fractions):
            raise ValueError("curves must share metric and grid")
    values = np.vstack([c.per_seed_values for c in curves])
    seeds = tuple(s for c in curves for s in c.seeds)
    return _summarise(first.metric, first.fractions, values, seeds)


# --------------------------------------------------------------------------
# subgroup reports

@dataclass(frozen=True)
class AuditConfig:
    match_cfg: MatchConfig = field(default_factory=MatchConfig)
    sample_seed: int = 0


@dataclass(frozen=True)
class SubsetEntry:
    name: str
    report: Optional[MetricReport]
    ratio: float
    note: str = ""


@dataclass(frozen=True)
class SubgroupReport:
    entries: dict[str, SubsetEntry]
    deltas: dict[str, dict[str, Optional[float]]]
    match_result: Optional[MatchResult] = None

    def flags(self) -> dict[str, dict[str, str]]:
        """``better`` / ``worse`` / ``same`` per subset and metric."""
        out = {}
        for name, d in self.deltas.items():
            out[name] = {}
            for m, v in d.items():
                if v is None or v == 0:
                    out[name][m] = "same" if v == 0 else ""
                elif (v > 0) == (m in PERFORMANCE):
                    out[name][m] = "better"
                else:
                    out[name][m] = "worse"
        return out

    def to_dict(self) -> dict:
        return {
            "subsets": {
                k: {
                    "ratio": e.ratio,
                    "note": e.note,
                    "metrics": None if e.report is None else e.report.to_dict(),
                }
                for k, e in self.entries.items()
            },
            "deltas": self.deltas,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubgroupReport":
        entries = {
            k: SubsetEntry(k, None if e["metrics"] is None else MetricReport.from_dict(e["metrics"]), e["ratio"], e["note"])
            for k, e in d["subsets"].items()
        }
        return cls(entries, {k: dict(v) for k, v in d["deltas"].items()})

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["subset", "ratio", "n"] + list(ALL_METRICS) + ["note"])
        for name in SUBSETS:
            e = self.entries[name]
            cells = e.report.csv_row() if e.report else [""] * len(ALL_METRICS)
            w.writerow([name, repr(e.ratio), e.report.n if e.report else 0] + cells + [e.note])
        return out.getvalue()

    def deltas_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        flags = self.flags()
        w.writerow(["subset"] + list(ALL_METRICS) + [f"{m}_flag" for m in ALL_METRICS])
        for name in SUBSETS[:-1]:
            d = self.deltas[name]
            w.writerow([name] + [_num(d[m]) for m in ALL_METRICS] + [flags[name][m] for m in ALL_METRICS])
        return out.getvalue()


def relative_delta(sub: Optional[float], orig: Optional[float]) -> Optional[float]:
    if sub is None or orig is None or orig == 0:
        return None
    return (sub - orig) / orig


def subgroup_report(
    model,
    split: SplitPair,
    cfg: Optional[AuditConfig] = None,
    match_result: Optional[MatchResult] = None,
    propensity_model=None,
) -> SubgroupReport:
    """Metric reports on the matched subset, the three balanced samples and the full test set."""
    cfg = cfg or AuditConfig()
    test = split.test
    n = len(test)
    yhat = default_predict(model.predict_proba(test.features))
    if match_result is None:
        ps = propensity_scores(propensity_model or model, test)
        feats = test.features if cfg.match_cfg.distance_mode == "euclidean" else None
        match_result = match(ps, test.pa, cfg.match_cfg, features=feats)

    subsets: dict[str, tuple[Optional[np.ndarray], str]] = {}
    subsets["psm_matched"] = (test.positions_of(match_result.matched_ids), "")
    for name, strategy in _SAMPLER_OF.items():
        try:
            sel = SAMPLERS[strategy](test, cfg.sample_seed)
            subsets[name] = (test.positions_of(sel.selected_ids), "")
        except DegenerateSampleError as exc:
            subsets[name] = (None, str(exc))
    subsets["original"] = (np.arange(n), "")

    entries = {}
    for name in SUBSETS:
        pos, note = subsets[name]
        if pos is None:
            entries[name] = SubsetEntry(name, None, 0.0, note)
            continue
        rep = _safe_evaluate(test.labels[pos], yhat[pos], test.pa[pos])
        if rep is None:
            note = note or "degenerate subset (empty or single protected group)"
        ratio = matched_ratio(match_result, n) if name == "psm_matched" else len(pos) / n
        entries[name] = SubsetEntry(name, rep, ratio, note)

    orig = entries["original"].report
    deltas = {}
    for name in SUBSETS[:-1]:
        rep = entries[name].report
        deltas[name] = {
            m: relative_delta(rep.get(m) if rep else None, orig.get(m) if orig else None)
            for m in ALL_METRICS
        }
    return SubgroupReport(entries, deltas, match_result)


@dataclass(frozen=True)
class DeltaSummary:
    mean: dict[str, dict[str, Optional[float]]]
    std: dict[str, dict[str, Optional[float]]]
    count: dict[str, dict[str, int]]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["statistic", "subset"] + list(ALL_METRICS))
        for stat, table in (("mean", self.mean), ("std", self.std)):
            for name in SUBSETS[:-1]:
                w.writerow([stat, name] + [_num(table[name][m]) for m in ALL_METRICS])
        return out.getvalue()

    def block_std(self, block: Sequence[str]) -> float:
        """Average of the per-(subset, metric) standard deviations in a metric block."""
        vals = [self.std[s][m] for s in self.std for m in block if self.std[s][m] is not None]
        return float(np.mean(vals)) if vals else float("nan")


def aggregate_deltas(reports: Sequence[SubgroupReport]) -> DeltaSummary:
    """Per-subset, per-metric mean and (population) std of the relative deltas."""
    if not reports:
        raise ValueError("need at least one report")
    mean, std, count = {}, {}, {}
    for name in SUBSETS[:-1]:
        mean[name], std[name], count[name] = {}, {}, {}
        for m in ALL_METRICS:
            vals = [r.deltas[name][m] for r in reports if r.deltas[name][m] is not None]
            count[name][m] = len(vals)
            mean[name][m] = float(np.mean(vals)) if vals else None
            std[name][m] = float(np.std(vals)) if vals else None
    return DeltaSummary(mean, std, count)

