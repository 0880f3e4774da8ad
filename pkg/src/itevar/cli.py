"""Command-line front end: simulate datasets, fit estimators on a CSV,
and run experiment specs.

Exit codes: 0 success, 1 usage error, 2 runtime/estimation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .causal import fit_causal_forest
from .config import SpecError, parse_experiment_file
from .data import fingerprint_of, read_dataset_csv, write_dataset_csv
from .extended import (extend_causal_forest, export_fit_csv, pep_cate_only,
                       pep_gaussian, population_sd, sd_cate_only)
from .forest import ForestParams
from .harness import run_experiment
from .scenarios import (SCENARIO_KINDS, ConfigError, generate_dataset,
                        scenario_config)

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="itevar")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a simulated dataset CSV")
    sim.add_argument("--scenario", required=True, choices=SCENARIO_KINDS)
    sim.add_argument("--n", required=True, type=int)
    sim.add_argument("--rho", type=float, default=0.0)
    sim.add_argument("--kappa", type=float, default=None)
    sim.add_argument("--strong", action="store_true")
    sim.add_argument("--seed", required=True, type=int)
    sim.add_argument("--out", required=True)
    sim.add_argument("--oracle", action="store_true",
                     help="append the hidden y0,y1,ite columns (evaluation only)")

    fit = sub.add_parser("fit", help="fit one estimator on a dataset CSV")
    fit.add_argument("--input", required=True)
    fit.add_argument("--estimator", required=True,
                     choices=("crf", "extended", "crf_no_orth"))
    fit.add_argument("--trees", type=int, default=500)
    fit.add_argument("--min-node-size", type=int, default=5)
    fit.add_argument("--seed", required=True, type=int)
    fit.add_argument("--out", required=True)
    fit.add_argument("--paper-literal-denominator", action="store_true",
                     help="use the plain residual-sum denominator in the "
                          "weighted effect ratio (unstable; for fidelity "
                          "experiments)")

    exp = sub.add_parser("experiment", help="run an experiment spec file")
    exp.add_argument("--config", required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--workers", type=int, default=1)
    return parser


def _cmd_simulate(args) -> int:
    if args.kappa is not None and args.scenario != "dependent":
        raise _UsageError(
            "--kappa is only valid with --scenario dependent "
            f"(got --scenario {args.scenario})")
    if args.strong and args.scenario != "confounder":
        raise _UsageError(
            "--strong is only valid with --scenario confounder "
            f"(got --scenario {args.scenario})")
    overrides = {"rho": args.rho}
    if args.kappa is not None:
        overrides["kappa"] = args.kappa
    if args.strong:
        overrides["strong"] = True
    cfg = scenario_config(args.scenario, args.n, args.seed, **overrides)
    ds = generate_dataset(cfg)
    resolved = cfg.resolved()
    comments = [
        f"fingerprint={fingerprint_of(resolved)}",
        f"config={json.dumps(resolved, sort_keys=True)}",
    ]
    hidden = None
    if args.oracle:
        hidden = (ds.hidden.y0, ds.hidden.y1, ds.hidden.ite)
    write_dataset_csv(args.out, ds.observed(), hidden=hidden,
                      header_comments=comments)
    return 0


def _cmd_fit(args) -> int:
    obs, _ = read_dataset_csv(args.input)
    params = ForestParams(num_trees=args.trees,
                          min_node_size=args.min_node_size, seed=args.seed)
    denominator = "plain" if args.paper_literal_denominator else "squared"
    resolved = {
        "input": os.path.basename(args.input),
        "estimator": args.estimator,
        "trees": args.trees,
        "min_node_size": args.min_node_size,
        "seed": args.seed,
        "denominator": denominator,
        "n": obs.n,
    }
    fp = fingerprint_of(resolved)
    comments = [f"fingerprint={fp}",
                f"config={json.dumps(resolved, sort_keys=True)}"]

    cf = fit_causal_forest(obs, params,
                           orthogonalized=(args.estimator != "crf_no_orth"),
                           denominator=denominator)
    os.makedirs(args.out, exist_ok=True)
    fit_path = os.path.join(args.out, "fit.csv")
    if args.estimator == "extended":
        ext = extend_causal_forest(cf)
        export_fit_csv(ext, fit_path, header_comments=comments)
        summary = {"estimator": "extended", "ate": ext.ate,
                   "sd": population_sd(ext), "pep": pep_gaussian(ext)}
    else:
        tau = cf.cate_oob()
        with open(fit_path, "w", encoding="utf-8", newline="\n") as fh:
            for line in comments:
                fh.write(f"# {line}\n")
            fh.write("i,tau_hat\n")
            for i, t in enumerate(tau):
                fh.write(f"{i},{t:.17g}\n")
        summary = {"estimator": args.estimator, "ate": cf.ate_aipw().ate,
                   "sd": sd_cate_only(tau), "pep": pep_cate_only(tau)}
    summary.update({"n": obs.n, "fingerprint": fp, "config": resolved})
    with open(os.path.join(args.out, "summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _cmd_experiment(args) -> int:
    spec = parse_experiment_file(args.config)
    _, failures = run_experiment(spec, args.out, workers=args.workers)
    if failures:
        for sid, rep, err in failures:
            print(f"FAILED scenario={sid} replication={rep}: {err}",
                  file=sys.stderr)
        return RUNTIME_ERROR
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "fit":
            return _cmd_fit(args)
        return _cmd_experiment(args)
    except (_UsageError, ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
