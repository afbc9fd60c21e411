"""Command line front end: ``gcfate estimate`` and ``gcfate simulate``.

Exit codes: 0 success, 2 usage, 3 data validation, 4 numerical failure.
Every flag can also be set in a YAML ``--config`` file (same names with
underscores); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import yaml

from . import __version__
from .crossfit import fit_full_sample, fit_out_of_fold, make_folds
from .data import EstimationError, ValidationError, positivity_diagnostic, validate_dataset
from .estimators import SCHEMA_VERSION, dif_estimate, gaipw_estimate, gcf_estimate
from .nuisance import DEFAULT_OUTCOME, DEFAULT_PROPENSITY, ConvergenceWarning, LearnerSpec
from .simulation import DESIGNS, design_from_dict, get_design, run_monte_carlo

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

ESTIMATE_DEFAULTS = {
    "treatment": None, "outcome": None, "covariates": None, "n_arms": None,
    "estimators": "dif,gaipw,gcf", "k": 3, "alpha": 0.05, "xi": 1e-3, "seed": 0,
    "stratified": True, "simultaneous": True, "out_json": None, "out_table": None,
    "folds_csv": None, "outcome_learner": None, "propensity_learner": None,
}
SIMULATE_DEFAULTS = {
    "design": None, "design_file": None, "n": None, "reps": None, "seed": None,
    "estimators": None, "k": None, "alpha": None, "xi": None, "simultaneous": None,
    "threads": 1, "out_csv": None, "out_table": None,
}


class UsageError(Exception):
    pass


def _csv_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcfate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    e = sub.add_parser("estimate", help="estimate pairwise ATEs from a CSV file",
                       argument_default=S)
    e.add_argument("input", help="CSV with a header row")
    e.add_argument("--config", help="YAML file with option defaults")
    e.add_argument("--treatment", help="name of the treatment column")
    e.add_argument("--outcome", help="name of the outcome column")
    e.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    e.add_argument("--n-arms", type=int, help="number of arms J (default: distinct labels)")
    e.add_argument("--estimators", help="comma list from dif,gaipw,gcf (default: all)")
    e.add_argument("--k", type=int, help="number of cross-fitting folds (default 3)")
    e.add_argument("--alpha", type=float, help="1 - confidence level (default 0.05)")
    e.add_argument("--xi", type=float, help="propensity clipping bound (default 1e-3)")
    e.add_argument("--seed", type=int, help="fold assignment seed (default 0)")
    e.add_argument("--no-stratify", dest="stratified", action="store_false",
                   help="plain random folds instead of arm-stratified ones")
    e.add_argument("--per-pair", dest="simultaneous", action="store_false",
                   help="unadjusted per-pair intervals instead of Bonferroni")
    e.add_argument("--out-json", help="write estimates as JSON")
    e.add_argument("--out-table", help="write the text table")
    e.add_argument("--folds-csv", help="write the fold assignment for audit")

    s = sub.add_parser("simulate", help="run a Monte Carlo study", argument_default=S)
    s.add_argument("design", nargs="?", help=f"built-in design: {', '.join(DESIGNS)}")
    s.add_argument("--config", help="YAML file with option defaults")
    s.add_argument("--design-file", help="YAML design file (keys of SimulationDesign)")
    s.add_argument("--n", type=int, help="sample size per replication")
    s.add_argument("--reps", type=int, help="number of replications")
    s.add_argument("--seed", type=int, help="base seed")
    s.add_argument("--estimators", help="comma list from dif,gaipw,gcf,oracle")
    s.add_argument("--k", type=int, help="number of cross-fitting folds")
    s.add_argument("--alpha", type=float, help="1 - confidence level")
    s.add_argument("--xi", type=float, help="propensity clipping bound")
    s.add_argument("--bonferroni", dest="simultaneous", action="store_true",
                   help="score coverage of Bonferroni simultaneous intervals")
    s.add_argument("--threads", type=int, help="worker processes (default 1)")
    s.add_argument("--out-csv", help="write the metrics CSV")
    s.add_argument("--out-table", help="write the text table")
    return p


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    cfg = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config {path} must be a mapping")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    cfg.update({k: v for k, v in vars(args).items() if k not in ("command", "config")})
    return cfg


def read_csv_columns(path, text_columns=(), required=()) -> dict[str, list]:
    """Read a CSV into columns, converting all but ``text_columns`` to float.

    Raises :class:`ValidationError` naming the offending line.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise ValidationError(f"{path}: duplicate column names in header")
        missing = [c for c in required if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {missing}; header has {header}")
        numeric = set(header) - set(text_columns)
        cols = {h: [] for h in header}
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}, line {reader.line_num}: expected {len(header)} "
                                      f"fields, found {len(row)}")
            for h, v in zip(header, row):
                v = v.strip()
                if h in numeric:
                    try:
                        v = float(v)
                    except ValueError:
                        raise ValidationError(f"{path}, line {reader.line_num}: column {h!r} "
                                              f"value {v!r} is not numeric") from None
                cols[h].append(v)
    return cols


def _learner(cfg_value, default: LearnerSpec) -> LearnerSpec:
    if cfg_value is None:
        return default
    if isinstance(cfg_value, str):
        return LearnerSpec(cfg_value) if cfg_value != default.kind else default
    return LearnerSpec(**cfg_value)


def cmd_estimate(args: argparse.Namespace) -> int:
    cfg = _merge_config(args, ESTIMATE_DEFAULTS)
    for key in ("treatment", "outcome"):
        if not cfg[key]:
            raise UsageError(f"--{key} column name is required")
    methods = [m.lower() for m in (cfg["estimators"] if isinstance(cfg["estimators"], list)
                                   else _csv_list(cfg["estimators"]))]
    bad = set(methods) - {"dif", "gaipw", "gcf"}
    if bad or not methods:
        raise UsageError(f"unknown estimators {sorted(bad)}; choose from dif, gaipw, gcf")
    if not 0 < cfg["alpha"] < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if not 0 < cfg["xi"] < 0.5:
        raise UsageError("--xi must lie in (0, 0.5)")
    if not 2 <= cfg["k"] <= 10:
        raise UsageError("--k must lie in 2..10")
    covs = cfg["covariates"]
    if isinstance(covs, str):
        covs = _csv_list(covs)
    columns = read_csv_columns(cfg["input"], text_columns=[cfg["treatment"]],
                               required=[cfg["treatment"], cfg["outcome"], *(covs or [])])
    n_arms = cfg["n_arms"] or len(set(columns[cfg["treatment"]]))
    if covs is None:
        covs = [c for c in columns if c not in (cfg["treatment"], cfg["outcome"])]
    d = validate_dataset(columns, n_arms, cfg["treatment"], cfg["outcome"], covs)
    outcome_spec = _learner(cfg["outcome_learner"], DEFAULT_OUTCOME)
    prop_spec = _learner(cfg["propensity_learner"], DEFAULT_PROPENSITY)

    results, diagnostics = [], {}
    kw = {"alpha": cfg["alpha"], "simultaneous": cfg["simultaneous"]}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        if "dif" in methods:
            results.append(dif_estimate(d, **kw))
        if "gaipw" in methods:
            om, pm = fit_full_sample(d, outcome_spec, prop_spec)
            diagnostics["GAIPW"] = positivity_diagnostic(pm.predict(d.covariates), cfg["xi"])
            results.append(gaipw_estimate(d, om, pm, xi=cfg["xi"], **kw))
        if "gcf" in methods:
            plan = make_folds(d, cfg["k"], cfg["seed"], cfg["stratified"])
            nuis = fit_out_of_fold(d, plan, outcome_spec, prop_spec, cfg["xi"])
            diagnostics["GCF"] = positivity_diagnostic(nuis, cfg["xi"])
            results.append(gcf_estimate(d, plan, nuis, **kw))
            if cfg["folds_csv"]:
                plan.to_csv(cfg["folds_csv"])
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    for name, rep in diagnostics.items():
        print(f"[{name}] {rep}")
    table = "\n\n".join(r.to_table() for r in results)
    print(table)
    effective = dict(cfg)
    effective["covariates"] = list(covs)
    effective["n_arms"] = n_arms
    if cfg["out_table"]:
        Path(cfg["out_table"]).write_text(table + "\n", encoding="utf-8")
    if cfg["out_json"]:
        doc = {"schema_version": SCHEMA_VERSION, "config": effective,
               "labels": [str(x) for x in d.labels],
               "positivity": {k: v.to_dict() for k, v in diagnostics.items()},
               "estimates": [r.to_dict() for r in results]}
        Path(cfg["out_json"]).write_text(json.dumps(doc, indent=2, default=str) + "\n",
                                         encoding="utf-8")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _merge_config(args, SIMULATE_DEFAULTS)
    if cfg["design_file"]:
        try:
            spec = yaml.safe_load(Path(cfg["design_file"]).read_text(encoding="utf-8")) or {}
            design = design_from_dict(spec)
        except OSError as exc:
            raise UsageError(f"cannot read design file: {exc}") from None
        except (yaml.YAMLError, TypeError, ValueError, KeyError) as exc:
            raise UsageError(f"invalid design file {cfg['design_file']}: {exc}") from None
    elif cfg["design"]:
        try:
            design = get_design(cfg["design"])
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
    else:
        raise UsageError(f"a design name ({', '.join(DESIGNS)}) or --design-file is required")
    overrides = {}
    for key, field_name in (("n", "n"), ("reps", "reps"), ("seed", "seed"), ("k", "n_folds"),
                            ("alpha", "alpha"), ("xi", "xi"), ("simultaneous", "simultaneous")):
        if cfg[key] is not None:
            overrides[field_name] = cfg[key]
    if cfg["estimators"]:
        ests = cfg["estimators"]
        ests = ests if isinstance(ests, list) else _csv_list(ests)
        overrides["estimators"] = tuple(e.upper() for e in ests)
    try:
        design = design.replace(**overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_monte_carlo(design, threads=max(1, int(cfg["threads"])))
    effective = {**cfg, "design": design.to_dict()}
    table = report.to_table()
    print(table)
    print(f"wall clock {report.wall_clock:.1f}s; drop rate {report.drop_rate:.2%}")
    if cfg["out_csv"]:
        report.to_csv(cfg["out_csv"])
    if cfg["out_table"]:
        header = "# config: " + json.dumps(effective, default=str)
        Path(cfg["out_table"]).write_text(f"{header}\n{table}\n", encoding="utf-8")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = {"estimate": cmd_estimate, "simulate": cmd_simulate}[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"gcfate {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"gcfate {args.command}: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"gcfate {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
