"""Cardinality-constrained mean-variance comparator.

The lower level for a fixed selection is the QP

    min x'Qx  s.t.  mu'x >= r, 1'x = 1, x >= 0, x_n = 0 off the support,

with ``Q = Sigma`` (plus ``I/(2 gamma_mv)`` when a ridge term is requested).
Relaxing ``x_n = 0`` to ``x <= z`` makes the optimal value convex in ``z``,
and the multipliers of ``x <= z`` give the cut slope, so the same master as
the robust model applies.  Selections whose assets all fall short of the
return target are excluded with no-good cuts.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from . import conic
from .conic import Cone, ConeProgram, IpmSettings
from .lower_level import Cut, Evaluation, SolverFailure
from .model import ModelError, Moments, Portfolio, Selection
from .numerics import cholesky
from .upper_level import SolveConfig, SolveResult, TimeLimitReached, run_cutting_plane


class GloballyInfeasible(ModelError):
    """No selection can reach the required return."""


@dataclass(frozen=True)
class MeanVarianceSpec:
    moments: Moments
    required_return: float
    k: int
    gamma_mv: Optional[float] = None

    def __post_init__(self):
        n = self.moments.n_assets
        if not 1 <= self.k <= n:
            raise ModelError(f"cardinality {self.k} outside [1, {n}]")
        if self.gamma_mv is not None and not self.gamma_mv > 0:
            raise ModelError("gamma_mv must be positive when given")

    @property
    def n_assets(self) -> int:
        return self.moments.n_assets

    def quadratic(self) -> np.ndarray:
        q = np.array(self.moments.covariance, dtype=float)
        if self.gamma_mv is not None:
            q += np.eye(q.shape[0]) / (2.0 * self.gamma_mv)
        return q


@dataclass
class QPSolution:
    z: Selection
    value: float
    x: Optional[np.ndarray]
    rho: float = 0.0
    tau: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.x is not None


def first_quartile_return(moments: Moments) -> float:
    """Lower quartile of the sample means, linear interpolation at rank (N-1)/4."""
    return float(np.quantile(np.asarray(moments.mean, dtype=float), 0.25, method="linear"))


def solve_selection_qp(spec: MeanVarianceSpec, z: Selection,
                       settings: IpmSettings | None = None) -> QPSolution:
    """Minimum-variance portfolio on the support of ``z`` meeting the return target.

    When the target equals the best mean on the support the feasible set has
    no interior and the interior point method may stall.  The target is then
    relaxed by a tiny margin; the relaxed value is a lower bound on the exact
    one, so cuts built from it remain valid.
    """
    mu = np.asarray(spec.moments.mean, dtype=float)
    idx = z.support
    if idx.size == 0 or mu[idx].max() < spec.required_return:
        return QPSolution(z, math.inf, None)
    target = float(spec.required_return)
    scale = max(1.0, abs(target))
    for slack in (0.0, 1e-10 * scale, 1e-9 * scale):
        found = _selection_qp(spec, z, target - slack, settings)
        if found is not None:
            return found
    raise SolverFailure(z, conic.Status.NUMERIC_FAILURE, "mean-variance subproblem")


def _selection_qp(spec, z, target, settings):
    mu = np.asarray(spec.moments.mean, dtype=float)
    idx = z.support
    q = spec.quadratic()
    factor = cholesky(q[np.ix_(idx, idx)])
    m = idx.size

    prog = ConeProgram()
    x = prog.add_block("x", Cone.NONNEG, m)
    epi = prog.add_block("epi", Cone.RSOC, m + 2)   # 2*u*v >= |w|^2 with v = 1/2
    slack = prog.add_block("slack", Cone.NONNEG, 1)
    prog.add_cost(prog.col(epi, 0), 1.0)
    prog.add_row({prog.col(epi, 1): 1.0}, 0.5)
    for i in range(m):
        row = {prog.col(epi, 2 + i): -1.0}
        for j in range(m):
            if factor[j, i] != 0.0:
                row[prog.col(x, j)] = factor[j, i]
        prog.add_row(row, 0.0)
    budget = prog.n_rows
    prog.add_row({prog.col(x, i): 1.0 for i in range(m)}, 1.0)
    ret = prog.n_rows
    row = {prog.col(x, i): float(mu[idx[i]]) for i in range(m)}
    row[prog.col(slack)] = -1.0
    prog.add_row(row, target)

    sol = conic.solve(prog, settings)
    if sol.status is conic.Status.INFEASIBLE:
        return QPSolution(z, math.inf, None)
    if not sol.optimal:
        return None
    weights = np.zeros(spec.n_assets)
    weights[idx] = np.maximum(prog.value(sol.x, "x"), 0.0)
    weights /= weights.sum()
    value = float(weights @ q @ weights)
    return QPSolution(z, value, weights, rho=max(float(sol.y[ret]), 0.0), tau=float(sol.y[budget]))


def mv_cut(spec: MeanVarianceSpec, qp: QPSolution) -> Cut:
    """Slope of the relaxed value function from the multipliers of ``x <= z``."""
    mu = np.asarray(spec.moments.mean, dtype=float)
    grad_x = 2.0 * spec.quadratic() @ qp.x
    g = np.zeros(spec.n_assets)
    off = qp.z.complement
    g[off] = -np.maximum(0.0, qp.rho * mu[off] + qp.tau - grad_x[off])
    return Cut(qp.z, qp.value, g)


def _oracle(spec: MeanVarianceSpec, settings: IpmSettings | None):
    def oracle(z: Selection) -> Evaluation:
        qp = solve_selection_qp(spec, z, settings)
        if not qp.feasible:
            return Evaluation(z, math.inf, None)
        return Evaluation(z, qp.value, mv_cut(spec, qp))
    return oracle


def solve_mean_variance(spec: MeanVarianceSpec, config: SolveConfig | None = None) -> SolveResult:
    config = config or SolveConfig()
    start = time.monotonic()
    n = spec.n_assets
    relaxed = solve_selection_qp(spec, Selection.ones(n), config.ipm)
    if not relaxed.feasible:
        raise GloballyInfeasible(
            f"required return {spec.required_return} exceeds the largest mean "
            f"{float(np.max(spec.moments.mean))}"
        )
    state, termination, iterations = run_cutting_plane(
        n, spec.k, relaxed.value, _oracle(spec, config.ipm), config, start
    )
    if state.z_hat is None:
        raise TimeLimitReached("no feasible selection found before the time limit")
    best = solve_selection_qp(spec, state.z_hat, config.ipm)
    return SolveResult(
        selection=state.z_hat,
        portfolio=Portfolio(best.x),
        objective=state.ub,
        lower_bound=min(state.lb, state.ub),
        upper_bound=state.ub,
        iterations=iterations,
        cuts=len(state.cuts) + len(state.nogoods),
        nodes=state.nodes,
        wall_time=time.monotonic() - start,
        mode=config.mode,
        termination=termination,
        portfolio_objective=best.value,
        history=state.history,
    )


def enumerate_mean_variance(spec: MeanVarianceSpec, settings: IpmSettings | None = None):
    """Best (value, selection) over all supports of size k, by brute force."""
    best = (math.inf, None)
    for support in combinations(range(spec.n_assets), spec.k):
        z = Selection.from_support(spec.n_assets, support)
        value = solve_selection_qp(spec, z, settings).value
        if value < best[0]:
            best = (value, z)
    return best
