"""End-to-end experiments: datasets x methods x seeded repeats, reports and ranks.

For every (dataset, seed) cell the data is split once and the learner is
fitted once; every method is then evaluated on that identical split.  A
cell is also audited: subgroup report on the PSM-matched subset and the
sampling baselines, and fairness curves over the unmatched fraction.
"""
from __future__ import annotations

import csv
import functools
import hashlib
import io
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__, dataio, learners
from .fairtest import (
    AuditConfig,
    DEFAULT_GRID,
    FairnessCurve,
    SUBSETS,
    SubgroupReport,
    aggregate_deltas,
    combine_curves,
    fairness_curve,
    subgroup_report,
)
from .metrics import ALL_METRICS, PERFORMANCE, MetricReport, evaluate
from .plot import curves_svg
from .psm import MatchConfig, matched_ratio
from .stats import RankTable, scott_knott
from .thresholds import ThresholdPair, calibrated_predict, default_predict, fit_fairmatch

log = logging.getLogger(__name__)

BUILTIN_METHODS = ("baseline", "fairmatch")
CURVE_METRICS = ("di", "spd")
FORMATS = ("csv", "json", "svg")


class ConfigError(ValueError):
    """The experiment cannot start: bad dataset, attribute, method or option."""


@dataclass(frozen=True)
class ExternalMethod:
    """Scores produced elsewhere, read from a CSV with ``row_id,score`` (and optionally ``seed``)."""

    name: str
    path: str

    @classmethod
    def parse(cls, text: str) -> "ExternalMethod":
        # "external:NAME=PATH"
        body = text.split(":", 1)[1] if text.startswith("external:") else text
        if "=" not in body:
            raise ConfigError(f"external method must look like external:NAME=PATH, got {text!r}")
        name, path = body.split("=", 1)
        return cls(name.strip(), path.strip())


def _method_name(m) -> str:
    return m.name if isinstance(m, ExternalMethod) else m


def _method_doc(m):
    if not isinstance(m, ExternalMethod):
        return m
    # the scores decide the numbers, so their content is part of the config identity
    p = Path(m.path)
    digest = hashlib.sha256(p.read_bytes()).hexdigest() if p.is_file() else None
    return {"name": m.name, "path": m.path, "sha256": digest}


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[tuple[str, str], ...]
    learner: str = "logistic"
    methods: tuple = BUILTIN_METHODS
    repeats: int = 20
    train_fraction: float = 0.7
    base_seed: int = 0
    seeds: Optional[tuple[int, ...]] = None
    match_cfg: MatchConfig = field(default_factory=MatchConfig)
    grid_step: float = 0.01
    audit: bool = True
    curve_grid: tuple[float, ...] = DEFAULT_GRID
    out_dir: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        methods = tuple(ExternalMethod.parse(m) if isinstance(m, str) and m.startswith("external") else m
                        for m in self.methods)
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "datasets", tuple((str(d), str(p)) for d, p in self.datasets))
        if self.seeds is not None:
            object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def seed_list(self) -> tuple[int, ...]:
        if self.seeds is not None:
            return self.seeds
        return tuple(self.base_seed + i for i in range(self.repeats))

    def validate(self) -> None:
        if not self.datasets:
            raise ConfigError("no datasets given")
        if self.learner not in ("logistic", "gbt"):
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.seeds is not None and len(self.seeds) != self.repeats:
            raise ConfigError(f"{len(self.seeds)} seeds listed but repeats is {self.repeats}")
        if len(set(self.seed_list())) != len(self.seed_list()):
            raise ConfigError("seeds must be distinct")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        if not 0 < self.grid_step <= 1:
            raise ConfigError("grid_step must be in (0, 1]")
        if not self.methods:
            raise ConfigError("no methods given")
        names = [_method_name(m) for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError("method names must be unique")
        for m in self.methods:
            if isinstance(m, ExternalMethod):
                if not Path(m.path).is_file():
                    raise ConfigError(f"external predictions file not found: {m.path}")
            elif m not in BUILTIN_METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for name, pa in self.datasets:
            try:
                dataio.load_schema(name, pa)
            except (dataio.SchemaError, FileNotFoundError, KeyError) as exc:
                raise ConfigError(f"{name}:{pa}: {exc}") from exc

    def to_dict(self) -> dict:
        """Everything that determines the numbers (not where they go or how fast)."""
        return {
            "datasets": [list(d) for d in self.datasets],
            "learner": self.learner,
            "methods": [_method_doc(m) for m in self.methods],
            "seeds": list(self.seed_list()),
            "train_fraction": self.train_fraction,
            "match_cfg": asdict(self.match_cfg),
            "grid_step": self.grid_step,
            "audit": self.audit,
            "curve_grid": [float(f) for f in self.curve_grid],
        }

    @classmethod
    def from_dict(cls, d: dict, **extra) -> "ExperimentConfig":
        methods = tuple(ExternalMethod(m["name"], m["path"]) if isinstance(m, dict) else m for m in d["methods"])
        return cls(
            datasets=tuple(tuple(x) for x in d["datasets"]),
            learner=d["learner"],
            methods=methods,
            repeats=len(d["seeds"]),
            seeds=tuple(d["seeds"]),
            train_fraction=d["train_fraction"],
            match_cfg=MatchConfig(**d["match_cfg"]),
            grid_step=d["grid_step"],
            audit=d["audit"],
            curve_grid=tuple(d["curve_grid"]),
            **extra,
        )

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def dataset_key(name: str, pa: str) -> str:
    return f"{name}-{pa}"


@dataclass(frozen=True)
class RunRecord:
    dataset: str
    method: str
    seed: int
    ok: bool
    report: Optional[MetricReport] = None
    gd: Optional[float] = None
    matched_ratio: Optional[float] = None
    thresholds: Optional[ThresholdPair] = None
    split_fingerprint: str = ""
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "seed": self.seed,
            "ok": self.ok,
            "report": None if self.report is None else self.report.to_dict(),
            "gd": self.gd,
            "matched_ratio": self.matched_ratio,
            "thresholds": None if self.thresholds is None else self.thresholds.to_dict(),
            "split_fingerprint": self.split_fingerprint,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            d["dataset"], d["method"], int(d["seed"]), bool(d["ok"]),
            None if d["report"] is None else MetricReport.from_dict(d["report"]),
            d["gd"], d["matched_ratio"],
            None if d["thresholds"] is None else ThresholdPair.from_dict(d["thresholds"]),
            d["split_fingerprint"], d["error"],
        )


@dataclass(frozen=True)
class CellAudit:
    dataset: str
    seed: int
    subgroups: Optional[SubgroupReport]
    curves: dict[str, FairnessCurve]
    error: str = ""


@dataclass(eq=False)
class ExperimentResults:
    config: ExperimentConfig
    records: list[RunRecord]
    audits: list[CellAudit] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def n_failures(self) -> int:
        return sum(not r.ok for r in self.records)

    def records_for(self, dataset: str, method: Optional[str] = None) -> list[RunRecord]:
        return [r for r in self.records if r.dataset == dataset and (method is None or r.method == method)]

    def dataset_keys(self) -> list[str]:
        return [dataset_key(*d) for d in self.config.datasets]

    def method_names(self) -> list[str]:
        return [_method_name(m) for m in self.config.methods]

    def curves(self, dataset: str) -> dict[str, FairnessCurve]:
        """Per-metric curve pooling the replicates of every seed's split."""
        per = [a.curves for a in self.audits if a.dataset == dataset and a.curves]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return {m: combine_curves([c[m] for c in per]) for m in CURVE_METRICS if per}

    def subgroup_reports(self, dataset: str) -> list[SubgroupReport]:
        return [a.subgroups for a in self.audits if a.dataset == dataset and a.subgroups is not None]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "provenance": self.provenance,
            "records": [r.to_dict() for r in self.records],
            "audits": [
                {
                    "dataset": a.dataset,
                    "seed": a.seed,
                    "subgroups": None if a.subgroups is None else a.subgroups.to_dict(),
                    "curves": {m: c.to_dict() for m, c in sorted(a.curves.items())},
                    "error": a.error,
                }
                for a in self.audits
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResults":
        audits = [
            CellAudit(
                a["dataset"], int(a["seed"]),
                None if a["subgroups"] is None else SubgroupReport.from_dict(a["subgroups"]),
                {m: FairnessCurve.from_dict(c) for m, c in a["curves"].items()},
                a["error"],
            )
            for a in d["audits"]
        ]
        return cls(
            ExperimentConfig.from_dict(d["config"]),
            [RunRecord.from_dict(r) for r in d["records"]],
            audits,
            d["provenance"],
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentResults":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# running

@functools.lru_cache(maxsize=8)
def _dataset(name: str, pa: str) -> dataio.Dataset:
    return dataio.load(name, pa)


@functools.lru_cache(maxsize=16)
def _external_scores(path: str) -> pd.DataFrame:
    df = pd.read_csv(path)
    if not {"row_id", "score"} <= set(df.columns):
        raise ValueError(f"{path}: need columns row_id and score")
    return df


def _external_predict(method: ExternalMethod, test: dataio.Dataset, seed: int, dataset: str) -> np.ndarray:
    df = _external_scores(method.path)
    if "dataset" in df.columns:
        df = df[df["dataset"] == dataset]
    if "seed" in df.columns:
        df = df[df["seed"] == seed]
    scores = pd.Series(df["score"].to_numpy(float), index=df["row_id"].to_numpy(np.int64))
    if scores.index.has_duplicates:
        raise ValueError(f"{method.path}: duplicate row ids for seed {seed}")
    missing = np.setdiff1d(test.row_ids, scores.index.to_numpy())
    if len(missing):
        raise ValueError(f"{method.path}: no score for {len(missing)} test rows (seed {seed})")
    return default_predict(scores.loc[test.row_ids].to_numpy())


def _fit(cfg: ExperimentConfig, split: dataio.SplitPair):
    if cfg.learner == "gbt":
        return learners.fit_gbt(split.train.features, split.train.labels)
    return learners.fit_logistic(split.train.features, split.train.labels)


def _failure(ds: str, methods, seed: int, fp: str, msg: str) -> list[RunRecord]:
    return [RunRecord(ds, _method_name(m), seed, False, split_fingerprint=fp, error=msg) for m in methods]


def run_cell(cfg: ExperimentConfig, name: str, pa: str, seed: int) -> tuple[list[RunRecord], Optional[CellAudit]]:
    """One split, one fit, every method; failures become records."""
    ds = dataset_key(name, pa)
    fp = ""
    try:
        split = dataio.split(_dataset(name, pa), cfg.train_fraction, seed)
        fp = split.fingerprint()
        model = _fit(cfg, split)
        test = split.test
        scores = model.predict_proba(test.features)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            thresholds, match_result = fit_fairmatch(model, split, cfg.match_cfg, cfg.grid_step)
    except Exception as exc:  # noqa: BLE001 - recorded, run continues
        log.warning("%s seed %d failed: %s", ds, seed, exc)
        return _failure(ds, cfg.methods, seed, fp, f"{type(exc).__name__}: {exc}"), None

    ratio = matched_ratio(match_result, len(test))
    records = []
    for m in cfg.methods:
        mname = _method_name(m)
        try:
            th, rec_ratio = None, ratio
            if m == "baseline":
                yhat = default_predict(scores)
            elif m == "fairmatch":
                yhat = calibrated_predict(scores, test.pa, match_result, thresholds, test.row_ids)
                th = thresholds
            else:
                yhat = _external_predict(m, test, seed, ds)
                rec_ratio = None
            rep = evaluate(test.labels, yhat, test.pa)
            records.append(RunRecord(ds, mname, seed, True, rep, rep.gd(), rec_ratio, th, fp))
        except Exception as exc:  # noqa: BLE001
            records.append(RunRecord(ds, mname, seed, False, split_fingerprint=fp, error=f"{type(exc).__name__}: {exc}"))

    audit = None
    if cfg.audit:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sub = subgroup_report(model, split, AuditConfig(cfg.match_cfg, sample_seed=seed), match_result)
                curves = {
                    metric: fairness_curve(model, test, match_result, metric, cfg.curve_grid, n_seeds=1, base_seed=seed,
                                           predictions=default_predict(scores))
                    for metric in CURVE_METRICS
                }
            audit = CellAudit(ds, seed, sub, curves)
        except Exception as exc:  # noqa: BLE001
            audit = CellAudit(ds, seed, None, {}, f"{type(exc).__name__}: {exc}")
    return records, audit


def _run_cell_star(args):
    return run_cell(*args)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResults:
    """Run the full (dataset x seed) grid; per-cell failures are recorded, config errors raise."""
    cfg.validate()
    for name, pa in cfg.datasets:
        try:
            _dataset(name, pa)
        except FileNotFoundError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
        except (dataio.SchemaError, dataio.DegenerateDatasetError) as exc:
            raise ConfigError(f"{name}:{pa}: {exc}") from exc

    cells = [(cfg, name, pa, seed) for name, pa in cfg.datasets for seed in cfg.seed_list()]
    if cfg.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outputs = list(pool.map(_run_cell_star, cells))  # map keeps submission order
    else:
        outputs = [run_cell(*c) for c in cells]

    records = [r for recs, _ in outputs for r in recs]
    audits = [a for _, a in outputs if a is not None]
    _check_seed_discipline(records)
    provenance = {
        "toolkit_version": __version__,
        "config_hash": cfg.config_hash(),
        "seeds": list(cfg.seed_list()),
        "scaling": "min-max fitted once per dataset on all rows, before splitting",
        "propensity_model": "the prediction model itself",
        "match": asdict(cfg.match_cfg),
        "learner": cfg.learner,
        "learner_config": asdict(learners.GbtConfig() if cfg.learner == "gbt" else learners.LogisticConfig()),
    }
    return ExperimentResults(cfg, records, audits, provenance)


def _check_seed_discipline(records: Sequence[RunRecord]) -> None:
    seen: dict[tuple[str, int], str] = {}
    for r in records:
        if not r.split_fingerprint:
            continue
        key = (r.dataset, r.seed)
        if seen.setdefault(key, r.split_fingerprint) != r.split_fingerprint:
            raise AssertionError(f"methods saw different splits for {key}")


# --------------------------------------------------------------------------
# ranking

def rank_methods(results: ExperimentResults, metric: str) -> dict[str, RankTable]:
    """Scott-Knott ranks of the methods per dataset for one metric (rank 1 best)."""
    if metric not in ALL_METRICS and metric != "gd":
        raise ValueError(f"unknown metric {metric!r}")
    out = {}
    for ds in results.dataset_keys():
        groups = {}
        for m in results.method_names():
            vals = [_value(r, metric) for r in results.records_for(ds, m) if r.ok]
            vals = [v for v in vals if v is not None]
            if vals:
                groups[m] = vals
        if not groups:
            continue
        if min(len(v) for v in groups.values()) < 2:
            raise ValueError(f"{ds}: ranking needs at least two seeds per method")
        out[ds] = scott_knott(groups, smaller_is_better=metric not in PERFORMANCE)
    return out


def _value(r: RunRecord, metric: str) -> Optional[float]:
    if metric == "gd":
        return r.gd
    return r.report.get(metric) if r.report else None


# --------------------------------------------------------------------------
# reports

def _num(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def _mean(vals) -> Optional[float]:
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def _std(vals) -> Optional[float]:
    vals = [v for v in vals if v is not None]
    return float(np.std(vals)) if vals else None


def _writer():
    buf = io.StringIO()
    return buf, csv.writer(buf, lineterminator="\n")


def subgroup_table(reports: Sequence[SubgroupReport]) -> str:
    """Per subset: mean ratio and mean of each metric over the seeds."""
    buf, w = _writer()
    w.writerow(["subset", "ratio"] + list(ALL_METRICS) + ["n_seeds"])
    for name in SUBSETS:
        entries = [r.entries[name] for r in reports]
        reps = [e.report for e in entries if e.report is not None]
        row = [name, _num(_mean([e.ratio for e in entries]))]
        row += [_num(_mean([rp.get(m) for rp in reps])) for m in ALL_METRICS]
        w.writerow(row + [len(reps)])
    return buf.getvalue()


def delta_table(reports: Sequence[SubgroupReport]) -> str:
    """Mean relative delta per subset with a better/worse flag."""
    summary = aggregate_deltas(reports)
    buf, w = _writer()
    w.writerow(["subset"] + list(ALL_METRICS) + [f"{m}_flag" for m in ALL_METRICS])
    for name in SUBSETS[:-1]:
        means = [summary.mean[name][m] for m in ALL_METRICS]
        flags = [_flag(m, v) for m, v in zip(ALL_METRICS, means)]
        w.writerow([name] + [_num(v) for v in means] + flags)
    return buf.getvalue()


def _flag(metric: str, v: Optional[float]) -> str:
    if v is None:
        return ""
    if v == 0:
        return "same"
    return "better" if (v > 0) == (metric in PERFORMANCE) else "worse"


def methods_table(results: ExperimentResults, dataset: str) -> str:
    """Method comparison: median, mean, std and Scott-Knott rank per metric (plus GD)."""
    metrics = list(ALL_METRICS) + ["gd"]
    ranks = {}
    for m in metrics:
        try:
            ranks[m] = rank_methods(results, m).get(dataset)
        except ValueError:
            ranks[m] = None
    buf, w = _writer()
    w.writerow(["method", "metric", "median", "mean", "std", "rank", "n_ok", "n_failed"])
    for meth in results.method_names():
        recs = results.records_for(dataset, meth)
        for m in metrics:
            vals = [v for v in (_value(r, m) for r in recs if r.ok) if v is not None]
            rank = ranks[m].ranks.get(meth, "") if ranks[m] else ""
            w.writerow([
                meth, m,
                _num(np.median(vals)) if vals else "",
                _num(_mean(vals)), _num(_std(vals)), rank,
                sum(r.ok for r in recs), sum(not r.ok for r in recs),
            ])
    return buf.getvalue()


def records_table(results: ExperimentResults) -> str:
    buf, w = _writer()
    w.writerow(["dataset", "method", "seed", "ok"] + list(ALL_METRICS)
               + ["gd", "matched_ratio", "theta_priv", "theta_unpriv", "p_value", "split", "error"])
    for r in results.records:
        cells = r.report.csv_row() if r.report else [""] * len(ALL_METRICS)
        th = r.thresholds
        w.writerow([r.dataset, r.method, r.seed, int(r.ok)] + cells + [
            _num(r.gd), _num(r.matched_ratio),
            _num(th.theta_priv if th else None), _num(th.theta_unpriv if th else None),
            _num(th.p_value if th else None), r.split_fingerprint, r.error,
        ])
    return buf.getvalue()


def _write(path: Path, text: str, written: list[Path]) -> None:
    path.write_text(text, encoding="utf-8")
    written.append(path)


def emit_reports(results: ExperimentResults, out_dir, formats: Sequence[str] = FORMATS) -> list[Path]:
    """Write CSV tables, the JSON archive and SVG curves; returns the written paths."""
    formats = list(formats)
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown formats {sorted(unknown)}")
    if not formats:
        return []
    if not results.records:
        raise ValueError("no results to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")

    written: list[Path] = []
    if "csv" in formats:
        _write(out / "records.csv", records_table(results), written)
        all_reports = []
        for ds in results.dataset_keys():
            _write(out / f"{ds}_methods.csv", methods_table(results, ds), written)
            reports = results.subgroup_reports(ds)
            if reports:
                all_reports += reports
                _write(out / f"{ds}_subgroup.csv", subgroup_table(reports), written)
                _write(out / f"{ds}_delta.csv", delta_table(reports), written)
                _write(out / f"{ds}_rq2.csv", aggregate_deltas(reports).to_csv(), written)
        if all_reports:
            _write(out / "rq2_all.csv", aggregate_deltas(all_reports).to_csv(), written)
    if "json" in formats:
        _write(out / "results.json", results.to_json(), written)
    if "svg" in formats:
        for ds in results.dataset_keys():
            curves = results.curves(ds)
            for metric, c in curves.items():
                _write(out / f"{ds}_curve_{metric}.svg", curves_svg([c], [metric.upper()], title=ds), written)
    return written
