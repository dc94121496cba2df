"""Command line entry point: fetch, audit, mitigate, experiment, rank."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, dataio, fetch as fetch_mod, harness, learners
from .fairtest import AuditConfig, fairness_curve, subgroup_report
from .metrics import ALL_METRICS, evaluate
from .psm import MatchConfig, matched_ratio
from .thresholds import calibrated_predict, certificate, default_predict, fit_fairmatch

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

log = logging.getLogger("fairmatch")


def _common(p: argparse.ArgumentParser, multi_dataset: bool = False) -> None:
    if multi_dataset:
        p.add_argument("--dataset", action="append", required=True,
                       help="schema id, optionally NAME:ATTR; repeat for several datasets")
    else:
        p.add_argument("--dataset", required=True, help="schema id (adult, compas, german, heart, bank, meps)")
    p.add_argument("--protected-attr", default=None, help="protected attribute (default: the schema's)")
    p.add_argument("--seed", type=int, default=0, help="split seed (base seed for experiments)")
    p.add_argument("--learner", choices=("logistic", "gbt"), default="logistic")
    p.add_argument("--caliper", type=float, default=MatchConfig.caliper)
    p.add_argument("--k", type=int, default=MatchConfig.k)
    p.add_argument("--distance", choices=("propensity", "euclidean"), default="propensity")
    p.add_argument("--grid-step", type=float, default=0.01)
    p.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairmatch", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and normalise public datasets")
    p.add_argument("names", nargs="*", help="datasets (default: all automatically fetchable)")
    p.add_argument("--out", default=None, help=f"destination (default ${dataio.DATA_ENV} or ~/.cache/fairmatch)")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("audit", help="PSM decomposition, subgroup report and fairness curve for one split")
    _common(p)
    p.add_argument("--metric", default="di", choices=ALL_METRICS, help="metric for the fairness curve")
    p.add_argument("--curve-seeds", type=int, default=20)

    p = sub.add_parser("mitigate", help="fit FairMatch thresholds and write a certificate")
    _common(p)

    p = sub.add_parser("experiment", help="datasets x methods x seeded repeats")
    _common(p, multi_dataset=True)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--methods", nargs="+", default=list(harness.BUILTIN_METHODS),
                   help="baseline, fairmatch and/or external:NAME=scores.csv")
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--formats", nargs="*", default=list(harness.FORMATS), choices=harness.FORMATS)
    p.add_argument("--no-audit", action="store_true", help="skip subgroup reports and curves")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--fetch-missing", action="store_true", help="download datasets that are not cached yet")

    p = sub.add_parser("rank", help="Scott-Knott rank tables from a saved results.json")
    p.add_argument("results", help="results.json written by `experiment`")
    p.add_argument("--metric", action="append", default=None, help="metric (repeatable; default all and gd)")
    p.add_argument("--out", default=None)
    return parser


def _match_cfg(args) -> MatchConfig:
    return MatchConfig(k=args.k, caliper=args.caliper, distance_mode=args.distance)


def _split(args):
    data = dataio.load(args.dataset, args.protected_attr)
    return dataio.split(data, 0.7, args.seed)


def _fit(args, split):
    return learners.fit(args.learner, split.train.features, split.train.labels)


def _out_dir(args) -> Optional[Path]:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fetch(args) -> int:
    names = args.names or sorted(fetch_mod.SOURCES)
    failed = 0
    for name in names:
        try:
            path = fetch_mod.fetch(name, Path(args.out) if args.out else None, force=args.force)
            print(f"{name}: {path}")
        except KeyError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except RuntimeError as exc:
            print(f"{name}: failed: {exc}", file=sys.stderr)
            failed += 1
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_audit(args) -> int:
    split = _split(args)
    model = _fit(args, split)
    mcfg = _match_cfg(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = subgroup_report(model, split, AuditConfig(mcfg, sample_seed=args.seed))
        curve = fairness_curve(model, split.test, report.match_result, args.metric, n_seeds=args.curve_seeds,
                               base_seed=args.seed)
    result = report.match_result
    print(f"{args.dataset}:{split.test.schema.pa_name} seed={args.seed} test rows={len(split.test)} "
          f"pairs={result.n_pairs} matched ratio={matched_ratio(result, len(split.test)):.3f}")
    print(report.to_csv(), end="")
    print()
    print(report.deltas_csv(), end="")
    auc = "n/a" if curve.f_auc is None else f"{curve.f_auc:.3f}"
    print(f"\n{args.metric} f-AUC over unmatched fraction: {auc}")
    out = _out_dir(args)
    if out:
        from .plot import curves_svg

        (out / "subgroup.csv").write_text(report.to_csv())
        (out / "delta.csv").write_text(report.deltas_csv())
        (out / f"curve_{args.metric}.csv").write_text(curve.to_csv())
        (out / f"curve_{args.metric}.svg").write_text(curves_svg([curve], [args.metric.upper()], title=args.dataset))
        (out / "match.json").write_text(result.to_json())
    return EXIT_OK


def cmd_mitigate(args) -> int:
    split = _split(args)
    model = _fit(args, split)
    mcfg = _match_cfg(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        thresholds, result = fit_fairmatch(model, split, mcfg, args.grid_step)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    test = split.test
    scores = model.predict_proba(test.features)
    before = evaluate(test.labels, default_predict(scores), test.pa)
    after = evaluate(test.labels, calibrated_predict(scores, test.pa, result, thresholds, test.row_ids), test.pa)
    print(f"theta_priv={thresholds.theta_priv} theta_unpriv={thresholds.theta_unpriv} p={thresholds.p_value:.6g}")
    print("metric,default,fairmatch")
    for m in ALL_METRICS:
        b, a = before.get(m), after.get(m)
        print(f"{m},{'' if b is None else f'{b:.2f}'},{'' if a is None else f'{a:.2f}'}")
    cert = certificate(thresholds, result, mcfg, dataset=args.dataset, protected_attr=test.schema.pa_name,
                       seed=args.seed, learner=args.learner, split=split.fingerprint(), version=__version__)
    out = _out_dir(args)
    if out:
        (out / "certificate.json").write_text(cert)
        learners.save_model(model, out / "model.json")
        print(f"wrote {out / 'certificate.json'} and {out / 'model.json'}")
    return EXIT_OK


def _parse_datasets(values: Sequence[str], default_pa: Optional[str]) -> tuple[tuple[str, str], ...]:
    out = []
    for v in values:
        name, _, pa = v.partition(":")
        pa = pa or default_pa
        if not pa:
            schema = dataio.load_schema(name)
            pa = schema.pa_name
        out.append((name, pa))
    return tuple(out)


def cmd_experiment(args) -> int:
    datasets = _parse_datasets(args.dataset, args.protected_attr)
    if args.fetch_missing:
        for name, _ in datasets:
            schema = dataio.load_schema(name)
            if not dataio.dataset_path(schema).exists():
                fetch_mod.fetch(name)
    cfg = harness.ExperimentConfig(
        datasets=datasets,
        learner=args.learner,
        methods=tuple(args.methods),
        repeats=args.repeats,
        train_fraction=args.train_fraction,
        base_seed=args.seed,
        match_cfg=_match_cfg(args),
        grid_step=args.grid_step,
        audit=not args.no_audit,
        out_dir=args.out,
        workers=args.workers,
    )
    results = harness.run_experiment(cfg)
    for ds in results.dataset_keys():
        ok = sum(r.ok for r in results.records_for(ds))
        print(f"{ds}: {ok}/{len(results.records_for(ds))} records ok")
    if args.out:
        written = harness.emit_reports(results, args.out, args.formats)
        print(f"wrote {len(written)} files to {args.out}")
    if results.n_failures:
        for r in results.records:
            if not r.ok:
                print(f"failed: {r.dataset} {r.method} seed={r.seed}: {r.error}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_rank(args) -> int:
    path = Path(args.results)
    if not path.is_file():
        raise harness.ConfigError(f"no such results file: {path}")
    results = harness.ExperimentResults.from_json(path.read_text())
    metrics = args.metric or list(ALL_METRICS) + ["gd"]
    out = _out_dir(args)
    for metric in metrics:
        tables = harness.rank_methods(results, metric)
        for ds, table in tables.items():
            print(f"# {ds} {metric} ({'lower' if table.smaller_is_better else 'higher'} is better)")
            print(table.to_csv(), end="")
            if out:
                (out / f"{ds}_rank_{metric}.csv").write_text(table.to_csv())
    return EXIT_OK


COMMANDS = {
    "fetch": cmd_fetch,
    "audit": cmd_audit,
    "mitigate": cmd_mitigate,
    "experiment": cmd_experiment,
    "rank": cmd_rank,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (harness.ConfigError, dataio.SchemaError, dataio.DegenerateDatasetError, dataio.DegenerateSplitError,
            FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
