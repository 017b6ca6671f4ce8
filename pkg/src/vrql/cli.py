"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 runtime failure
(budget, schedule or convergence).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import complexity, lowerbound
from .errors import (
    BudgetError,
    ConvergenceError,
    DegenerateInstanceError,
    DimensionError,
    EnumerationOverflow,
    PreconditionError,
    ScheduleError,
    ValidationError,
)
from .example import example1_mdp, example1_params, example1_qstar, paper_budget
from .experiment import (
    ExperimentConfig,
    epoch_trace_experiment,
    fit_loglog_slope,
    rows_from_csv,
    rows_to_csv,
    scaling_experiment,
)
from .mdp import greedy_policy, linf_distance, load_mdp, save_mdp, solve_optimal_q
from .plotting import render_scaling_svg, render_trace_svg
from .sampling import SeededSampler
from .solvers import StepSize, standard_q_learning, vr_q_learning_with_budget

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3

RUNTIME_ERRORS = (BudgetError, ScheduleError, ConvergenceError, EnumerationOverflow)
INVALID_ERRORS = (
    ValidationError,
    DimensionError,
    PreconditionError,
    DegenerateInstanceError,
    OSError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _finite(v: float):
    return v if math.isfinite(v) else None


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def _c1(text: str) -> float:
    if text in ("fill", "inf"):
        return math.inf
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("c1 must be positive")
    return value


# ---------------------------------------------------------------- commands


def cmd_solve(args) -> int:
    mdp = load_mdp(args.mdp)
    q = solve_optimal_q(mdp)
    doc = {
        "qstar": q.tolist(),
        "policy": greedy_policy(q).tolist(),
        "optimal_actions": [a.tolist() for a in complexity.optimal_actions(q)],
        "gap": _finite(complexity.optimality_gap(mdp, qstar=q)),
        "n_zero": _finite(complexity.min_sample_size(mdp, qstar=q)),
    }
    _emit(json.dumps(doc, indent=2), args.out)
    return EXIT_OK


def cmd_complexity(args) -> int:
    report = complexity.complexity_report(load_mdp(args.mdp))
    _emit(report.to_csv() if args.format == "csv" else report.to_json(), args.out)
    return EXIT_OK


def _run_summary(q, qstar, record, sampler, extra: dict) -> dict:
    doc = {
        "final_error": linf_distance(q, qstar),
        "samples_used": sampler.draws,
        "seed": sampler.seed,
        "q": q.tolist(),
    }
    doc.update(extra)
    return doc


def cmd_run_ql(args) -> int:
    mdp = load_mdp(args.mdp)
    qstar = solve_optimal_q(mdp)
    sampler = SeededSampler(mdp, args.seed, budget=args.budget)
    step = StepSize.parse(args.stepsize)
    q, record = standard_q_learning(sampler, args.budget, stepsize=step, qstar=qstar)
    if args.trace:
        Path(args.trace).write_text(record.to_csv(args.every))
    doc = _run_summary(q, qstar, record, sampler, {"stepsize": str(step)})
    _emit(json.dumps(doc, indent=2), args.out)
    return EXIT_OK


def cmd_run_vrql(args) -> int:
    mdp = load_mdp(args.mdp)
    qstar = solve_optimal_q(mdp)
    sampler = SeededSampler(mdp, args.seed, budget=args.budget)
    q, record, schedules = vr_q_learning_with_budget(
        sampler,
        args.budget,
        delta=args.delta,
        c1=args.c1,
        base=args.base,
        warm_start=args.warm_start,
        qstar=qstar,
    )
    if args.trace:
        Path(args.trace).write_text(record.to_csv(args.every))
    doc = _run_summary(q, qstar, record, sampler, {"schedules": [s.to_dict() for s in schedules]})
    _emit(json.dumps(doc, indent=2), args.out)
    return EXIT_OK


def cmd_lowerbound(args) -> int:
    mdp = load_mdp(args.mdp)
    enforce = not args.allow_small_n
    report = lowerbound.verify_lemma3(mdp, args.n, enforce=enforce)
    report = report.merged(lowerbound.verify_separation(mdp, args.n, enforce=enforce))
    if args.format == "csv":
        _emit(report.to_csv(), args.out)
    else:
        doc = report.to_dict()
        if args.n >= report.min_sample_size:
            doc["local_minimax_bound"] = lowerbound.local_minimax_bound(mdp, args.n, c=args.constant)
            doc["local_minimax_constant"] = args.constant
        _emit(json.dumps(doc, indent=2), args.out)
    return EXIT_OK


def cmd_example1(args) -> int:
    mdp = example1_mdp(args.gamma, args.lam)
    p, tau = example1_params(args.gamma, args.lam)
    q = example1_qstar(args.gamma, args.lam)
    max_nu, pi = complexity.max_nu_over_optimal(mdp, qstar=q)
    doc = {
        "gamma": args.gamma,
        "lambda": args.lam,
        "p": p,
        "tau": tau,
        "qstar": q.tolist(),
        "max_nu_inf": max_nu,
        "argmax_policy": pi.tolist(),
        "budget": paper_budget(args.gamma),
    }
    if args.out:
        save_mdp(mdp, args.out)
        doc["mdp_file"] = args.out
    else:
        doc["mdp"] = mdp.to_dict()
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = ExperimentConfig.load(args.config)
    overrides = {
        "trials": args.trials,
        "seed": args.seed,
        "delta": args.delta,
        "base": args.base,
        "warm_start": args.warm_start,
        "workers": args.workers,
    }
    data = config.to_dict()
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if args.c1 is not None:
        # the config spells "fill the budget" as null
        data["c1"] = None if math.isinf(args.c1) else args.c1
    config = ExperimentConfig.from_dict(data)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    rows_path = Path(config.rows_csv) if config.rows_csv else out / "rows.csv"
    plot_path = Path(config.plot_svg) if config.plot_svg else out / "scaling.svg"
    result = scaling_experiment(config)
    rows_to_csv(result.rows, rows_path)
    for gamma, n, reason in result.infeasible:
        print(f"skipped gamma={gamma:g} n={n}: {reason}", file=sys.stderr)
    summary = {"rows": len(result.rows), "rows_csv": str(rows_path)}
    try:
        fit = fit_loglog_slope(result.rows)
        summary.update(slope=fit.slope, intercept=fit.intercept, stderr=fit.stderr)
    except ValidationError as exc:
        summary["fit"] = str(exc)
    if result.rows:
        plot_path.write_text(render_scaling_svg(result.rows, config.lam))
        summary["plot_svg"] = str(plot_path)
    if config.trace_gamma is not None or config.trace_csv:
        record = epoch_trace_experiment(config)
        trace_path = Path(config.trace_csv) if config.trace_csv else out / "trace.csv"
        trace_path.write_text(record.to_csv(max(1, len(record.errors) // 20000)))
        trace_svg = trace_path.with_suffix(".svg")
        trace_svg.write_text(render_trace_svg(record))
        summary.update(trace_csv=str(trace_path), trace_svg=str(trace_svg))
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_fit(args) -> int:
    fit = fit_loglog_slope(rows_from_csv(args.rows))
    print(json.dumps({"slope": fit.slope, "intercept": fit.intercept, "stderr": fit.stderr}, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vrql", description="Q-learning and instance-dependent complexity tools.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="optimal Q-function, policy, optimality gap and N0")
    p.add_argument("mdp")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("complexity", help="per-pair complexity functional")
    p.add_argument("mdp")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_complexity)

    for name, func, helptext in (
        ("run-ql", cmd_run_ql, "standard synchronous Q-learning"),
        ("run-vrql", cmd_run_vrql, "variance-reduced Q-learning"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("mdp")
        p.add_argument("--budget", type=int, required=True, help="total number of draws")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--trace", help="write the per-iteration error trace CSV here")
        p.add_argument("--every", type=int, default=1, help="keep every k-th trace row")
        p.add_argument("--out")
        if name == "run-ql":
            p.add_argument("--stepsize", default="rescaled", help="rescaled or poly:<omega>")
        else:
            p.add_argument("--delta", type=float, default=0.1)
            p.add_argument("--c1", type=_c1, default=1.0, help="re-centring constant, or 'fill'")
            p.add_argument("--base", type=float, default=4.0, help="epoch growth base")
            p.add_argument("--warm-start", type=float, default=0.0, help="budget fraction for a warm-up run")
        p.set_defaults(func=func)

    p = sub.add_parser("lowerbound", help="check the local alternatives at sample size n")
    p.add_argument("mdp")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--constant", type=float, default=lowerbound.DEFAULT_MINIMAX_CONSTANT)
    p.add_argument("--allow-small-n", action="store_true", help="report instead of refusing n < N0")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lowerbound)

    p = sub.add_parser("example1", help="two-state instance and its closed forms")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", help="write the MDP file here")
    p.set_defaults(func=cmd_example1)

    p = sub.add_parser("experiment", help="scaling sweep from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--c1", type=_c1)
    p.add_argument("--delta", type=float)
    p.add_argument("--base", type=float)
    p.add_argument("--warm-start", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("fit", help="log-log slope of a rows CSV")
    p.add_argument("rows")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except INVALID_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
