"""Command-line entry point: ``drport {solve,backtest,bench,verify}``.

Exit codes: 0 success, 1 invalid input, 2 solver failure (or a verify
mismatch), 3 time limit reached with an incumbent.  Errors are written to
stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from . import conic
from .backtest import BacktestConfig, DRStrategy, MVStrategy, rolling_backtest, write_report
from .baselines import MeanVarianceSpec, first_quartile_return, solve_mean_variance
from .data_io import gap_percent, parse_orlibrary, parse_returns_csv, result_record
from .lower_level import LiftInfeasible, SolverFailure
from .model import (
    DEFAULT_TANGENT_FRACTIONS,
    AssumptionViolation,
    Instance,
    ModelError,
    UncertaintySet,
    default_utility,
    estimate_moments,
)
from .synthetic import random_instance
from .upper_level import (
    ITERATIVE,
    SINGLE_TREE,
    TIME_LIMIT,
    SolveConfig,
    TimeLimitReached,
    cutting_plane_solve,
    enumerate_optimum,
)

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_TIME_LIMIT = 0, 1, 2, 3
ENV_TIME_LIMIT = "DRPORT_TIME_LIMIT"
ENV_WORKERS = "DRPORT_WORKERS"


class CommandError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _env_default(name: str, fallback, cast):
    raw = os.environ.get(name)
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError:
        raise CommandError(EXIT_INVALID, "InvalidEnvironment", f"{name}={raw!r} is not valid") from None


# ---------------------------------------------------------------------------
# argument parsing


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, required=True, help="number of assets to hold")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gamma", type=float, help="ridge parameter gamma")
    g.add_argument("--gamma-scaled", type=float, default=10.0,
                   help="gamma = G / sqrt(N) (default 10)")
    p.add_argument("--kappa1", type=float, default=1.0)
    p.add_argument("--kappa2", type=float, default=4.0)
    p.add_argument("--alpha", type=float, default=10.0, help="exponential utility risk aversion")
    p.add_argument("--tangents", type=_floats, default=list(DEFAULT_TANGENT_FRACTIONS),
                   help="tangent points as fractions of the largest mean, e.g. 0,0.5,1")


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--time-limit", type=float, default=None,
                   help=f"seconds (default 3600, or ${ENV_TIME_LIMIT})")
    p.add_argument("--mode", choices=(SINGLE_TREE, ITERATIVE), default=SINGLE_TREE)
    p.add_argument("--lower-bound", choices=("relaxation", "moment"), default="relaxation")
    p.add_argument("--no-reduce", action="store_true", help="solve lower levels in full dimension")
    p.add_argument("--workers", type=int, default=None, help=f"worker processes (or ${ENV_WORKERS})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drport", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve one instance and print the result JSON")
    src = solve.add_mutually_exclusive_group(required=True)
    src.add_argument("--returns", help="CSV of period returns (first column = period key)")
    src.add_argument("--orlib", help="OR-Library portfolio file")
    src.add_argument("--synthetic", type=int, metavar="N", help="seeded random instance with N assets")
    solve.add_argument("--mean-scale", type=float, default=1.0)
    solve.add_argument("--cov-scale", type=float, default=1.0)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--model", choices=("dr", "mv"), default="dr")
    solve.add_argument("--required-return", type=float, default=None,
                       help="MV return target (default: first quartile of the means)")
    solve.add_argument("--trace", help="write per-iteration bounds as JSON lines to this file")
    solve.add_argument("--output", "-o", help="result JSON path (default stdout)")
    _add_model_args(solve)
    _add_solver_args(solve)

    bt = sub.add_parser("backtest", help="rolling-horizon out-of-sample evaluation")
    bt.add_argument("--returns", required=True)
    bt.add_argument("--strategy", choices=("DR", "MV"), default="DR")
    bt.add_argument("--training", type=int, default=156)
    bt.add_argument("--testing", type=int, default=52)
    bt.add_argument("--step", type=int, default=52)
    bt.add_argument("--return-scale", type=float, default=1.0,
                    help="multiplier turning stored returns into fractions (0.01 for percent)")
    bt.add_argument("--output", "-o", required=True, help="report JSON path")
    bt.add_argument("--csv", help="optional CSV of (period, return)")
    _add_model_args(bt)
    _add_solver_args(bt)

    bench = sub.add_parser("bench", help="table of Obj, Gap(%%), Time, #Cuts, #Nodes")
    bench.add_argument("--n", type=_ints, default=[10])
    bench.add_argument("--k", type=_ints, default=[3])
    bench.add_argument("--kappa", type=_floats, default=[1.0, 4.0],
                       help="pairs kappa1,kappa2[,kappa1,kappa2...]")
    bench.add_argument("--gamma-scaled", type=_floats, default=[10.0])
    bench.add_argument("--alpha", type=float, default=10.0)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--instances", type=int, default=1)
    bench.add_argument("--json", action="store_true", help="JSON lines instead of a text table")
    _add_solver_args(bench)

    verify = sub.add_parser("verify", help="check the solver against brute-force enumeration")
    verify.add_argument("--n", type=int, default=7)
    verify.add_argument("--k", type=int, default=3)
    verify.add_argument("--instances", type=int, default=10)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--tol", type=float, default=1e-5)
    _add_solver_args(verify)
    return parser


# ---------------------------------------------------------------------------
# commands


@dataclass
class RunConfig:
    args: argparse.Namespace
    time_limit: float
    workers: int

    def solve_config(self, trace=None) -> SolveConfig:
        a = self.args
        return SolveConfig(epsilon=a.epsilon, time_limit=self.time_limit, mode=a.mode,
                           reduce=not a.no_reduce, lower_bound=a.lower_bound, trace=trace)


def _resolve(args: argparse.Namespace) -> RunConfig:
    time_limit = args.time_limit
    if time_limit is None:
        time_limit = _env_default(ENV_TIME_LIMIT, 3600.0, float)
    workers = args.workers
    if workers is None:
        workers = _env_default(ENV_WORKERS, 1, int)
    if not time_limit > 0:
        raise CommandError(EXIT_INVALID, "InvalidArgument", "time limit must be positive", field="time_limit")
    if workers < 1:
        raise CommandError(EXIT_INVALID, "InvalidArgument", "workers must be at least 1", field="workers")
    if args.epsilon < 0:
        raise CommandError(EXIT_INVALID, "InvalidArgument", "epsilon must be nonnegative", field="epsilon")
    return RunConfig(args, time_limit, workers)


def _gamma(args, n: int) -> float:
    return args.gamma if getattr(args, "gamma", None) is not None else args.gamma_scaled / math.sqrt(n)


def _load_moments(args):
    if args.returns:
        return estimate_moments(parse_returns_csv(args.returns))
    return parse_orlibrary(args.orlib, args.mean_scale, args.cov_scale)


def _instance(args, moments) -> Instance:
    return Instance(moments, UncertaintySet(args.kappa1, args.kappa2),
                    default_utility(moments, args.alpha, args.tangents),
                    _gamma(args, moments.n_assets), args.k)


def cmd_solve(cfg: RunConfig, out) -> int:
    a = cfg.args
    if a.synthetic is not None:
        moments = random_instance(a.synthetic, 1, a.seed).moments
    else:
        moments = _load_moments(a)
    trace = open(a.trace, "w") if a.trace else None
    try:
        if a.model == "mv":
            target = a.required_return if a.required_return is not None else first_quartile_return(moments)
            result = solve_mean_variance(MeanVarianceSpec(moments, target, a.k), cfg.solve_config(trace))
        else:
            result = cutting_plane_solve(_instance(a, moments), cfg.solve_config(trace))
    finally:
        if trace is not None:
            trace.close()
    text = json.dumps(result_record(result), indent=2) + "\n"
    if a.output:
        with open(a.output, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    return EXIT_TIME_LIMIT if result.termination == TIME_LIMIT else EXIT_OK


def cmd_backtest(cfg: RunConfig, out) -> int:
    a = cfg.args
    if a.strategy == "DR":
        if a.gamma is not None:
            raise CommandError(EXIT_INVALID, "InvalidArgument",
                               "backtest takes --gamma-scaled so gamma follows N", field="gamma")
        strategy = DRStrategy(a.k, a.kappa1, a.kappa2, a.alpha, a.gamma_scaled, tuple(a.tangents))
    else:
        strategy = MVStrategy(a.k)
    config = BacktestConfig(strategy, a.training, a.testing, a.step, cfg.solve_config(),
                            a.return_scale, cfg.workers)
    report = rolling_backtest(parse_returns_csv(a.returns), config)
    write_report(report, a.output, a.csv)
    out.write(json.dumps({"windows": len(report.windows), "cumulative": report.cumulative,
                          "failed": report.failed, "error": report.error}) + "\n")
    return EXIT_SOLVER if report.failed else EXIT_OK


def _bench_row(task):
    n, k, kappa1, kappa2, gs, alpha, seed, solve_config = task
    inst = random_instance(n, k, seed, kappa1=kappa1, kappa2=kappa2, alpha=alpha, gamma_scaled=gs)
    r = cutting_plane_solve(inst, solve_config)
    return {"N": n, "k": k, "kappa1": kappa1, "kappa2": kappa2, "gamma_scaled": gs, "seed": seed,
            "Obj": r.objective, "Gap(%)": gap_percent(r.upper_bound, r.lower_bound),
            "Time": r.wall_time, "#Cuts": r.cuts, "#Nodes": r.nodes, "termination": r.termination}


def _map(fn, tasks, workers: int):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_bench(cfg: RunConfig, out) -> int:
    a = cfg.args
    if len(a.kappa) % 2:
        raise CommandError(EXIT_INVALID, "InvalidArgument", "--kappa takes kappa1,kappa2 pairs", field="kappa")
    pairs = list(zip(a.kappa[::2], a.kappa[1::2]))
    tasks = [(n, k, k1, k2, gs, a.alpha, a.seed + i, cfg.solve_config())
             for n in a.n for k in a.k if k <= n for (k1, k2) in pairs
             for gs in a.gamma_scaled for i in range(a.instances)]
    rows = _map(_bench_row, tasks, cfg.workers)
    if a.json:
        for row in rows:
            out.write(json.dumps(row) + "\n")
    else:
        out.write(f"{'N':>4} {'k':>3} {'kappa':>9} {'gamma*sqrtN':>11} {'Obj':>12} "
                  f"{'Gap(%)':>8} {'Time':>8} {'#Cuts':>6} {'#Nodes':>7}\n")
        for r in rows:
            out.write(f"{r['N']:>4} {r['k']:>3} {r['kappa1']:>4g},{r['kappa2']:<4g} {r['gamma_scaled']:>11g} "
                      f"{r['Obj']:>12.6f} {r['Gap(%)']:>8.3f} {r['Time']:>8.2f} {r['#Cuts']:>6} {r['#Nodes']:>7}\n")
    code = EXIT_OK
    if any(r["termination"] == TIME_LIMIT for r in rows):
        code = EXIT_TIME_LIMIT
    return code


def _verify_one(task):
    n, k, seed, tol, solve_config = task
    inst = random_instance(n, k, seed)
    best, z_best = enumerate_optimum(inst, solve_config.ipm)
    r = cutting_plane_solve(inst, solve_config)
    ok = abs(r.objective - best) <= tol and r.termination != TIME_LIMIT
    return {"seed": seed, "N": n, "k": k, "objective": r.objective, "enumeration": best,
            "diff": r.objective - best, "selection": [int(i) for i in r.selection.support],
            "cuts": r.cuts, "nodes": r.nodes, "pass": bool(ok)}


def cmd_verify(cfg: RunConfig, out) -> int:
    a = cfg.args
    tasks = [(a.n, a.k, a.seed + i, a.tol, cfg.solve_config()) for i in range(a.instances)]
    rows = _map(_verify_one, tasks, cfg.workers)
    for row in rows:
        out.write(json.dumps(row) + "\n")
    passed = sum(r["pass"] for r in rows)
    out.write(json.dumps({"passed": passed, "total": len(rows)}) + "\n")
    return EXIT_OK if passed == len(rows) else EXIT_SOLVER


COMMANDS = {"solve": cmd_solve, "backtest": cmd_backtest, "bench": cmd_bench, "verify": cmd_verify}


def _error(err, code: int, kind: str, message: str, **extra) -> int:
    err.write(json.dumps({"error": kind, "message": message, "exit_code": code, **extra}) + "\n")
    return code


def run(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return COMMANDS[args.command](_resolve(args), out)
    except CommandError as exc:
        return _error(err, exc.code, exc.kind, str(exc), **exc.extra)
    except AssumptionViolation as exc:
        return _error(err, EXIT_INVALID, type(exc).__name__, str(exc), field=exc.field)
    except (ModelError, ValueError, OSError) as exc:
        return _error(err, EXIT_INVALID, type(exc).__name__, str(exc))
    except (SolverFailure, LiftInfeasible, conic.SolverError, TimeLimitReached, RuntimeError) as exc:
        return _error(err, EXIT_SOLVER, type(exc).__name__, str(exc))


def main() -> None:
    sys.exit(run())
