"""Command-line interface: ``dclc simulate | sweep | optimize | matrix | validate``.

Exit status: 0 success, 1 usage error, 2 scenario validation error,
3 capacity exhausted.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__
from .catalog import format_month
from .lifecycle import OPERATION_FLAGS, PURCHASE_MODES, OperationPolicy, RefreshPolicy, simulate
from .scenario import (ReportBundle, Scenario, Table, annual_tco_table, distribution_table, emit_reports,
                       events_table, fleet_timeline_table, fmt_cents, fmt_ratio, load_scenario_with_metadata,
                       regime_matrix_table, trials_table)
from .search import (DEFAULT_LIFETIMES, MATRIX_SHAPES, STAGES, MatrixCell, OptimizeResult, PolicyBundle,
                     ScenarioDistribution, ScenarioPool, holistic_space, optimize, sample_scenario,
                     scenario_for, stage_space, trial_seed)
from .tco import COOLING_KINDS, NETWORK_KINDS, POWER_TOPOLOGIES, make_design

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_EXHAUSTED = 0, 1, 2, 3
SPACES = STAGES + ("holistic",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2, which means "invalid scenario" here
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    # SUPPRESS lets the flags appear before or after the subcommand without clobbering each other
    g = p.add_argument_group("common options")
    g.add_argument("--scenario", default=argparse.SUPPRESS, help="scenario file or shipped name (default: baseline)")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default: $DCLC_SEED or 0)")
    g.add_argument("--trials", type=int, default=argparse.SUPPRESS, help="Monte Carlo trials per candidate (default 200)")
    g.add_argument("--out", default=argparse.SUPPRESS, help="report directory (default: dclc-out)")
    g.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS, help="table format (default csv)")


def _add_bundle(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("policy bundle (defaults come from the scenario)")
    g.add_argument("--power", choices=POWER_TOPOLOGIES)
    g.add_argument("--cooling", choices=COOLING_KINDS)
    g.add_argument("--network", choices=NETWORK_KINDS)
    g.add_argument("--lifetime", type=int, help="default server lifetime in months (0 keeps servers to the end)")
    g.add_argument("--life", action="append", default=[], metavar="SKU=MONTHS",
                   help="per-generation lifetime; 0 skips the generation (repeatable)")
    g.add_argument("--purchase-mode", choices=PURCHASE_MODES)
    g.add_argument("--ops", default="", help=f"comma list of {','.join(OPERATION_FLAGS)} or 'all'")


def _add_search(p: argparse.ArgumentParser) -> None:
    p.add_argument("--objective", choices=("mean", "p95"), default="mean")
    p.add_argument("--fixed", action="store_true", help="no scenario uncertainty: every trial is the scenario itself")
    p.add_argument("--lifetimes", default=",".join(str(x) for x in DEFAULT_LIFETIMES),
                   help="lifetimes in months for the refresh grid")
    p.add_argument("--exhaustive-ops", action="store_true", help="all 2^8 operation subsets instead of single flags")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dclc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dclc {__version__}")
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("simulate", help="run one scenario under one policy bundle")
    _add_common(p)
    _add_bundle(p)
    p.add_argument("--sampled", action="store_true",
                   help="simulate the scenario drawn for trial 0 of the seed instead of the file's modes")

    p = sub.add_parser("sweep", help="evaluate every candidate of one stage")
    _add_common(p)
    _add_bundle(p)
    _add_search(p)
    p.add_argument("--stage", choices=STAGES, required=True)

    p = sub.add_parser("optimize", help="best bundle of a policy space")
    _add_common(p)
    _add_bundle(p)
    _add_search(p)
    p.add_argument("--space", choices=SPACES, default="holistic")

    p = sub.add_parser("matrix", help="best bundle per model x hardware growth regime")
    _add_common(p)
    _add_bundle(p)
    _add_search(p)
    p.add_argument("--space", choices=SPACES, default="holistic")

    p = sub.add_parser("validate", help="check a scenario file and exit")
    _add_common(p)
    return parser


# ---------------------------------------------------------------------------
# argument helpers

def _seed(args: argparse.Namespace) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("DCLC_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"DCLC_SEED must be an integer, got {env!r}") from None


def _lifetimes(text: str) -> List[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--lifetimes must be comma-separated integers, got {text!r}") from None
    if not values or min(values) < 0:
        raise UsageError("--lifetimes needs at least one non-negative value")
    return values


def _bundle(args: argparse.Namespace, sc: Scenario) -> PolicyBundle:
    d = sc.design
    design = make_design(args.power or d.power.topology, args.cooling or d.cooling.kind,
                         args.network or d.network.kind, d.facility_capacity_watts)
    try:
        refresh = RefreshPolicy()
        if args.lifetime is not None:
            refresh = RefreshPolicy(default_lifetime_months=args.lifetime or None)
        known = {s.id for s in sc.resolve()[0]}
        for item in args.life:
            sku, sep, months = item.partition("=")
            if not sep:
                raise UsageError(f"--life expects SKU=MONTHS, got {item!r}")
            if sku not in known:
                raise UsageError(f"--life names unknown SKU {sku!r}")
            refresh = refresh.with_lifetime(sku, int(months))
        if args.purchase_mode:
            refresh = replace(refresh, purchase_mode=args.purchase_mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    op = OperationPolicy()
    names = [x.strip() for x in args.ops.split(",") if x.strip()]
    if names == ["all"]:
        op = OperationPolicy.all_on()
    elif names:
        unknown = sorted(set(names) - set(OPERATION_FLAGS))
        if unknown:
            raise UsageError(f"unknown operation flags {unknown}")
        op = op.with_flags(*names)
    return PolicyBundle(design, refresh, op)


# ---------------------------------------------------------------------------
# commands

def _ranking_table(res: OptimizeResult) -> Table:
    rows = []
    for rank, c in enumerate(res.ranked(), 1):
        obj = fmt_cents(int(round(c.objective))) if c.objective != float("inf") else ""
        ratio = fmt_ratio(c.ratio) if c.ratio != float("inf") else ""
        rows.append((str(rank), c.bundle.label, obj, ratio, str(c.dist.exhausted)))
    return Table("ranking", ("rank", "candidate", "objective_usd", "ratio", "exhausted"), rows)


def _search_summary(res: OptimizeResult) -> Dict:
    ratio = res.baseline_ratio
    return {"best": res.best.label, "objective": res.objective,
            "best_ratio": fmt_ratio(ratio) if ratio != float("inf") else None,
            "best_exhausted": res.dist.exhausted, "baseline_exhausted": res.baseline.exhausted,
            "candidates": len(res.candidates), "trials": res.dist.trials}


def _distribution(args: argparse.Namespace, sc: Scenario) -> ScenarioDistribution:
    return ScenarioDistribution.fixed(sc) if args.fixed else ScenarioDistribution(sc)


def _run_space(kind: str, dist: ScenarioDistribution, sc: Scenario, baseline: PolicyBundle,
               args: argparse.Namespace, trials: int, seed: int,
               pool: ScenarioPool) -> Tuple[OptimizeResult, Dict[str, OptimizeResult]]:
    lifetimes = _lifetimes(args.lifetimes)
    if kind in STAGES:
        space = stage_space(kind, sc, baseline, lifetimes, args.exhaustive_ops)
        return optimize(dist, space, args.objective, trials, seed, pool), {}
    stages = {}
    for stage in STAGES:
        space = stage_space(stage, sc, baseline, lifetimes, args.exhaustive_ops)
        stages[stage] = optimize(dist, space, args.objective, trials, seed, pool)
    space = holistic_space(dist, baseline, stages, trials, seed, args.objective, pool)
    return optimize(dist, space, args.objective, trials, seed, pool), stages


def cmd_simulate(args, sc: Scenario, seed: int) -> Tuple[ReportBundle, int]:
    bundle = _bundle(args, sc)
    if args.sampled:
        sc = sample_scenario(ScenarioDistribution(sc), trial_seed(seed, 0))
    result = simulate(scenario_for(bundle, sc), bundle.refresh, bundle.op)
    summary = {"bundle": bundle.label, "lifetime_tco_usd": fmt_cents(result.lifetime_tco),
               "halted": result.halted,
               "halt_month": format_month(result.halt_month) if result.halted else None,
               "halt_reason": result.halt_reason or None,
               "peak_servers": max(result.server_totals, default=0)}
    tables = [fleet_timeline_table(result), annual_tco_table(result), events_table(result)]
    return ReportBundle(seed, "simulate", tables, summary), EXIT_EXHAUSTED if result.halted else EXIT_OK


def cmd_sweep(args, sc: Scenario, seed: int) -> Tuple[ReportBundle, int]:
    baseline = _bundle(args, sc)
    dist = _distribution(args, sc)
    res, _ = _run_space(args.stage, dist, sc, baseline, args, args.trials, seed, ScenarioPool(dist))
    named = [(c.bundle.label, c.dist) for c in res.candidates]
    ratios = [c.ratio for c in res.candidates if c.ratio != float("inf")]
    summary = {**_search_summary(res), "stage": args.stage,
               "ratio_min": fmt_ratio(min(ratios)) if ratios else None,
               "ratio_max": fmt_ratio(max(ratios)) if ratios else None}
    tables = [_ranking_table(res), distribution_table(named), trials_table(named)]
    code = EXIT_EXHAUSTED if res.dist.exhausted else EXIT_OK
    return ReportBundle(seed, f"sweep --stage {args.stage}", tables, summary), code


def cmd_optimize(args, sc: Scenario, seed: int) -> Tuple[ReportBundle, int]:
    baseline = _bundle(args, sc)
    dist = _distribution(args, sc)
    res, stages = _run_space(args.space, dist, sc, baseline, args, args.trials, seed, ScenarioPool(dist))
    summary = {**_search_summary(res), "space": args.space,
               "stage_best": {k: {"best": r.best.label, "ratio": fmt_ratio(r.baseline_ratio)}
                              for k, r in stages.items() if r.baseline_ratio != float("inf")}}
    named = [("baseline", res.baseline), ("best", res.dist)]
    tables = [_ranking_table(res), distribution_table(named), trials_table(named)]
    code = EXIT_EXHAUSTED if res.dist.exhausted else EXIT_OK
    return ReportBundle(seed, f"optimize --space {args.space}", tables, summary), code


def cmd_matrix(args, sc: Scenario, seed: int) -> Tuple[ReportBundle, int]:
    baseline = _bundle(args, sc)
    base_dist = _distribution(args, sc)
    cells = {}
    for m in MATRIX_SHAPES:
        for h in MATRIX_SHAPES:
            dist = base_dist.with_regimes(m, h)
            res, _ = _run_space(args.space, dist, sc, baseline, args, args.trials, seed, ScenarioPool(dist))
            cells[(m, h)] = MatrixCell(m, h, res)
    matrix = cells
    summary = {"space": args.space, "trials": args.trials,
               "cells": {f"{m}/{h}": c.rows() for (m, h), c in matrix.items()}}
    # exhausted cells are reported in the table; the command itself succeeded
    return ReportBundle(seed, f"matrix --space {args.space}", [regime_matrix_table(matrix)], summary), EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "optimize": cmd_optimize, "matrix": cmd_matrix}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        seed = _seed(args)
        args.scenario = getattr(args, "scenario", "baseline")
        args.trials = getattr(args, "trials", 200)
        args.out = getattr(args, "out", "dclc-out")
        args.format = getattr(args, "format", "csv")
        if args.trials < 1:
            raise UsageError("--trials must be >= 1")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dclc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        loaded = load_scenario_with_metadata(args.scenario)
    except (ValueError, OSError) as exc:
        print(f"dclc: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        defaults = ", ".join(loaded.defaults_applied) or "none"
        print(f"{loaded.path}: ok (defaults applied: {defaults})")
        return EXIT_OK

    try:
        report, code = COMMANDS[args.command](args, loaded.scenario, seed)
    except UsageError as exc:
        print(f"dclc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report.summary["scenario"] = loaded.path
    report.summary["defaults_applied"] = list(loaded.defaults_applied)
    try:
        paths = emit_reports(report, Path(args.out), {args.format})
    except OSError as exc:
        print(f"dclc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for p in paths:
        print(p)
    if code == EXIT_EXHAUSTED:
        print("dclc: capacity exhausted (see summary.json)", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
