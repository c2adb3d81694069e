"""Rolling-horizon out-of-sample evaluation.

Each window trains on ``training`` consecutive periods, solves the configured
strategy on the sample moments, and holds the resulting weights through the
next ``testing`` periods.  Windows start every ``step`` periods; a window that
would run past the end of the data is skipped rather than shortened.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .baselines import MeanVarianceSpec, first_quartile_return, solve_mean_variance
from .data_io import ReturnMatrix
from .model import (
    DEFAULT_TANGENT_FRACTIONS,
    Instance,
    ModelError,
    UncertaintySet,
    default_utility,
    estimate_moments,
)
from .upper_level import SolveConfig, cutting_plane_solve


class InsufficientData(ModelError):
    pass


@dataclass(frozen=True)
class DRStrategy:
    k: int
    kappa1: float = 1.0
    kappa2: float = 4.0
    alpha: float = 10.0
    gamma_scaled: float = 10.0
    fractions: tuple[float, ...] = DEFAULT_TANGENT_FRACTIONS
    name: str = "DR"


@dataclass(frozen=True)
class MVStrategy:
    k: int
    required_return: Optional[float] = None   # first quartile of the means when None
    gamma_mv: Optional[float] = None
    name: str = "MV"


Strategy = Union[DRStrategy, MVStrategy, Callable[[np.ndarray], "WindowDecision"]]


@dataclass
class BacktestConfig:
    strategy: Strategy
    training: int = 156
    testing: int = 52
    step: int = 52
    solve: SolveConfig = field(default_factory=SolveConfig)
    return_scale: float = 1.0
    workers: int = 1

    def __post_init__(self):
        for name in ("training", "testing", "step", "workers"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be at least 1")


@dataclass
class WindowDecision:
    selection: list[int]
    weights: np.ndarray
    objective: float = math.nan


@dataclass
class WindowRecord:
    train_start: int
    train_stop: int
    test_start: int
    test_stop: int
    selection: list[int]
    weights: list[float]
    objective: float
    returns: list[float]
    solve_time_s: float


@dataclass
class BacktestReport:
    windows: list[WindowRecord]
    returns: list[float]
    periods: list[str]
    cumulative: float
    wall_time_s: float
    failed: bool = False
    error: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def cumulative_return(returns: Sequence[float]) -> float:
    """Product of (1 + R_m); 1 for an empty series."""
    total = 1.0
    for r in returns:
        total *= 1.0 + float(r)
    return total


def window_bounds(n_periods: int, training: int, testing: int, step: int) -> list[tuple[int, int, int]]:
    """(train_start, test_start, test_stop) for every complete window."""
    bounds = []
    start = 0
    while start + training + testing <= n_periods:
        bounds.append((start, start + training, start + training + testing))
        start += step
    return bounds


def decide(strategy: Strategy, train: np.ndarray, solve: SolveConfig) -> WindowDecision:
    """Weights for one window computed from the training slice only."""
    if callable(strategy) and not isinstance(strategy, (DRStrategy, MVStrategy)):
        return strategy(train)
    moments = estimate_moments(train)
    n = moments.n_assets
    if isinstance(strategy, DRStrategy):
        instance = Instance(
            moments,
            UncertaintySet(strategy.kappa1, strategy.kappa2),
            default_utility(moments, strategy.alpha, strategy.fractions),
            strategy.gamma_scaled / math.sqrt(n),
            strategy.k,
        )
        result = cutting_plane_solve(instance, solve)
    else:
        target = strategy.required_return
        if target is None:
            target = first_quartile_return(moments)
        result = solve_mean_variance(MeanVarianceSpec(moments, target, strategy.k, strategy.gamma_mv), solve)
    return WindowDecision([int(i) for i in result.selection.support],
                          np.asarray(result.portfolio.weights), float(result.objective))


def _run_window(args):
    strategy, values, bounds, solve, scale = args
    train_start, test_start, test_stop = bounds
    t0 = time.monotonic()
    decision = decide(strategy, values[train_start:test_start], solve)
    w = np.asarray(decision.weights, dtype=float)
    realized = scale * (values[test_start:test_stop] @ w)
    return WindowRecord(train_start, test_start, test_start, test_stop,
                        list(decision.selection), [float(v) for v in w],
                        float(decision.objective), [float(r) for r in realized],
                        time.monotonic() - t0)


def rolling_backtest(returns: ReturnMatrix, config: BacktestConfig) -> BacktestReport:
    start = time.monotonic()
    values = np.asarray(returns.values, dtype=float)
    m = values.shape[0]
    if m < config.training + config.testing:
        raise InsufficientData(
            f"{m} periods, need at least {config.training + config.testing}"
        )
    bounds = window_bounds(m, config.training, config.testing, config.step)
    tasks = [(config.strategy, values, b, config.solve, config.return_scale) for b in bounds]
    windows: list[WindowRecord] = []
    error = None
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            futures = [pool.submit(_run_window, t) for t in tasks]
            for fut in futures:
                try:
                    windows.append(fut.result())
                except Exception as exc:   # report the first failing window and stop
                    error = f"window {len(windows)}: {type(exc).__name__}: {exc}"
                    break
    else:
        for t in tasks:
            try:
                windows.append(_run_window(t))
            except Exception as exc:
                error = f"window {len(windows)}: {type(exc).__name__}: {exc}"
                break
    series = [r for w in windows for r in w.returns]
    periods = [returns.periods[i] for w in windows for i in range(w.test_start, w.test_stop)]
    return BacktestReport(windows, series, periods, cumulative_return(series),
                          time.monotonic() - start, failed=error is not None, error=error)


def write_report(report: BacktestReport, json_path, csv_path=None) -> None:
    with open(os.fspath(json_path), "w") as fh:
        fh.write(report.to_json() + "\n")
    if csv_path is not None:
        with open(os.fspath(csv_path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["period", "return"])
            for key, r in zip(report.periods, report.returns):
                writer.writerow([key, repr(r)])
