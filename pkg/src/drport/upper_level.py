"""Cutting-plane master over selections with exactly k assets.

The master keeps a pool of linear underestimators of f and minimizes their
maximum over binary selections by a small deterministic branch-and-bound
whose node relaxations are LPs solved by :mod:`drport.conic`.  Two drivers
sit on top of it:

* ``iterative``: solve the master to optimality, evaluate f at its answer,
  add the cut, repeat;
* ``single-tree``: one branch-and-bound run in which every integral node
  triggers an evaluation of f and a lazy cut, after which the node is
  re-solved.
"""
from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, TextIO

import numpy as np

from . import conic
from .conic import Cone, ConeProgram, IpmSettings
from .lower_level import Cut, Evaluation, evaluate, recover_portfolio, solve_full_dual, solve_lower
from .model import Instance, Portfolio, Selection, validate_instance

ITERATIVE = "iterative"
SINGLE_TREE = "single-tree"

EPS_OPTIMAL = "EpsOptimal"
TIME_LIMIT = "TimeLimit"
ITER_LIMIT = "IterLimit"

class NodeLimit(RuntimeError):
    pass


class TimeLimitReached(RuntimeError):
    """Raised only when the time limit expires before any incumbent exists."""


@dataclass
class SolveConfig:
    epsilon: float = 1e-5
    time_limit: float = 3600.0
    mode: str = SINGLE_TREE
    node_limit: int = 10**7
    max_iterations: int = 10**6
    reduce: bool = True
    lower_bound: str = "relaxation"
    ipm: IpmSettings = field(default_factory=IpmSettings)
    trace: Optional[TextIO] = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.mode not in (ITERATIVE, SINGLE_TREE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lower_bound not in ("relaxation", "moment"):
            raise ValueError(f"unknown lower bound rule {self.lower_bound!r}")


@dataclass
class MasterState:
    """Bounds ledger of a cutting-plane run."""

    epsilon: float
    theta_lb: float
    t: int = 0
    cuts: list[Cut] = field(default_factory=list)
    nogoods: list[Selection] = field(default_factory=list)
    z_hat: Optional[Selection] = None
    ub: float = math.inf
    lb: float = -math.inf
    nodes: int = 0
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def record(self, trace: Optional[TextIO], anchor: Optional[Selection]) -> None:
        self.history.append((self.t, self.lb, self.ub))
        if trace is not None:
            trace.write(json.dumps({
                "t": self.t, "LB": _finite(self.lb), "UB": _finite(self.ub),
                "pool": len(self.cuts), "anchor": str(anchor) if anchor else None,
            }) + "\n")


def _finite(v: float):
    return v if math.isfinite(v) else None


@dataclass
class SolveResult:
    selection: Selection
    portfolio: Optional[Portfolio]
    objective: float
    lower_bound: float
    upper_bound: float
    iterations: int
    cuts: int
    nodes: int
    wall_time: float
    mode: str
    termination: str
    portfolio_objective: float = math.nan
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.upper_bound - self.lower_bound


# ---------------------------------------------------------------------------
# master relaxation


class Master:
    """min theta over z in {0,1}^n, sum z = k, theta >= theta_lb and the cuts."""

    def __init__(self, n: int, k: int, theta_lb: float, cuts=(), nogoods=(),
                 settings: IpmSettings | None = None):
        if not 1 <= k <= n:
            raise ValueError(f"cardinality {k} outside [1, {n}]")
        self.n, self.k, self.theta_lb = n, k, float(theta_lb)
        self.cuts: list[Cut] = list(cuts)
        self.nogoods: list[Selection] = list(nogoods)
        self.settings = settings or IpmSettings()

    def theta(self, z) -> float:
        """Exact master objective at a binary point (inf if excluded)."""
        z = np.asarray(getattr(z, "array", z), dtype=float)
        for s in self.nogoods:
            if z @ s.array > self.k - 1 + 0.5:
                return math.inf
        return max([self.theta_lb] + [c.evaluate(z) for c in self.cuts])

    def relax(self, fixings: dict[int, int]):
        """LP bound and point at a node, or None if the node is infeasible."""
        n, k = self.n, self.k
        ones = sum(1 for v in fixings.values() if v == 1)
        if ones > k or ones + (n - len(fixings)) < k:
            return None
        prog = ConeProgram()
        z = prog.add_block("z", Cone.NONNEG, n)
        zc = prog.add_block("zc", Cone.NONNEG, n)
        e = prog.add_block("e", Cone.NONNEG, 1)
        prog.add_cost(prog.col(e), 1.0)
        for i in range(n):
            prog.add_row({prog.col(z, i): 1.0, prog.col(zc, i): 1.0}, 1.0)
        prog.add_row({prog.col(z, i): 1.0 for i in range(n)}, float(k))
        if self.cuts:
            s = prog.add_block("s", Cone.NONNEG, len(self.cuts))
            for j, cut in enumerate(self.cuts):
                row = {prog.col(e): 1.0, prog.col(s, j): -1.0}
                for i in range(n):
                    if cut.gradient[i] != 0.0:
                        row[prog.col(z, i)] = -cut.gradient[i]
                rhs = cut.value - float(cut.gradient @ cut.anchor.array) - self.theta_lb
                prog.add_row(row, rhs)
        if self.nogoods:
            g = prog.add_block("g", Cone.NONNEG, len(self.nogoods))
            for j, sel in enumerate(self.nogoods):
                row = {prog.col(z, i): 1.0 for i in sel.support}
                row[prog.col(g, j)] = 1.0
                prog.add_row(row, float(k - 1))
        for i, v in sorted(fixings.items()):
            prog.add_row({prog.col(z, i): 1.0}, float(v))
        sol = conic.solve(prog, self.settings)
        if sol.status is conic.Status.INFEASIBLE:
            return None
        if not sol.optimal:
            raise conic.SolverError(sol.status, "master relaxation")
        bound = self.theta_lb + min(sol.primal_objective, sol.dual_objective)
        return bound, np.clip(prog.value(sol.x, "z"), 0.0, 1.0)

    def candidate(self, fixings: dict[int, int], zstar: np.ndarray) -> Selection:
        """Binary point agreeing with the fixings that follows the LP point.

        Free coordinates are taken in decreasing LP value, ties to the lowest
        index, which also makes the choice lexicographic when the LP point
        does not discriminate.
        """
        chosen = [i for i, v in fixings.items() if v == 1]
        free = [i for i in range(self.n) if i not in fixings]
        free.sort(key=lambda i: (-round(float(zstar[i]), 6), i))
        chosen += free[: self.k - len(chosen)]
        return Selection.from_support(self.n, sorted(chosen))

    def branch_index(self, fixings: dict[int, int], zstar: np.ndarray) -> int:
        free = [i for i in range(self.n) if i not in fixings]
        return min(free, key=lambda i: (abs(float(zstar[i]) - 0.5), i))

    def certify(self, fixings, bound, zstar) -> Optional[Selection]:
        """A binary point whose exact master value matches the node bound."""
        z = self.candidate(fixings, zstar)
        if self.theta(z) <= bound + _tie_tol(bound):
            return z
        return None

    def solve(self, node_limit: int = 10**7, deadline: float = math.inf):
        """Optimal (z, theta, nodes) of the master by best-bound branch-and-bound."""
        heap = [(self.theta_lb, 0, {})]
        next_id = 1
        best_z, best_theta = None, math.inf
        nodes = 0
        while heap:
            key, node_id, fixings = heapq.heappop(heap)
            if key >= best_theta - _tie_tol(best_theta):
                break
            if nodes >= node_limit:
                raise NodeLimit(f"node budget {node_limit} exhausted")
            if time.monotonic() > deadline:
                raise TimeLimitReached("master branch-and-bound")
            nodes += 1
            relaxed = self.relax(fixings)
            if relaxed is None:
                continue
            bound, zstar = relaxed
            if bound >= best_theta - _tie_tol(best_theta):
                continue
            z = self.certify(fixings, bound, zstar)
            if z is not None:
                value = self.theta(z)
                if value < best_theta:
                    best_z, best_theta = z, value
                continue
            if len(fixings) == self.n:
                continue
            i = self.branch_index(fixings, zstar)
            for v in (0, 1):
                heapq.heappush(heap, (bound, next_id, {**fixings, i: v}))
                next_id += 1
        if best_z is None:
            raise RuntimeError("master problem has no feasible selection")
        return best_z, best_theta, nodes


def _tie_tol(value: float) -> float:
    return 1e-7 * (1.0 + abs(value)) if math.isfinite(value) else 0.0


def solve_master_relaxation(n: int, k: int, cuts, theta_lb: float,
                            settings: IpmSettings | None = None, node_limit: int = 10**7):
    """Optimal (selection, theta) of the surrogate upper-level problem."""
    z, theta, _ = Master(n, k, theta_lb, cuts, settings=settings).solve(node_limit)
    return z, theta


# ---------------------------------------------------------------------------
# bounds


def initial_lower_bound(instance: Instance, settings: IpmSettings | None = None,
                        rule: str = "relaxation") -> float:
    """Lower bound on min f over selections.

    ``relaxation`` solves the dual with every asset selected, i.e. without the
    cardinality limit.  ``moment`` is a closed-form bound for large N: the
    ridge term is at least 1/(2 gamma k) and the point mass at the sample
    mean belongs to the ambiguity set.
    """
    if rule == "relaxation":
        return solve_full_dual(instance, Selection.ones(instance.n_assets), settings).f_prime
    if rule == "moment":
        mu_max = float(np.max(instance.mean))
        a, b = instance.utility.a, instance.utility.b
        return 1.0 / (2.0 * instance.gamma * instance.k) + float(np.max(-a * mu_max - b))
    raise ValueError(f"unknown lower bound rule {rule!r}")


# ---------------------------------------------------------------------------
# drivers

Oracle = Callable[[Selection], Evaluation]


def run_cutting_plane(n: int, k: int, theta_lb: float, oracle: Oracle, config: SolveConfig,
                      start: float | None = None) -> tuple[MasterState, str, int]:
    """Drive the master against ``oracle``; returns (state, termination, iterations).

    ``oracle(z)`` returns an evaluation whose ``value`` is f(z) and whose
    ``cut`` underestimates f, or ``value = inf`` and ``cut = None`` when z is
    infeasible (a no-good cut is then added).
    """
    start = time.monotonic() if start is None else start
    deadline = start + config.time_limit
    state = MasterState(config.epsilon, theta_lb)
    master = Master(n, k, theta_lb, settings=config.ipm)
    state.cuts, state.nogoods = master.cuts, master.nogoods
    if config.mode == ITERATIVE:
        termination = _iterative(master, state, oracle, config, deadline)
    else:
        termination = _single_tree(master, state, oracle, config, deadline)
    return state, termination, state.t


def _absorb(master: Master, state: MasterState, ev: Evaluation) -> None:
    if ev.cut is None:
        master.nogoods.append(ev.z)
    else:
        master.cuts.append(ev.cut)


def _iterative(master, state, oracle, config, deadline) -> str:
    seen: dict[tuple, Evaluation] = {}
    while True:
        if state.t >= config.max_iterations:
            return ITER_LIMIT
        state.t += 1
        try:
            z, theta, nodes = master.solve(config.node_limit - state.nodes, deadline)
        except TimeLimitReached:
            state.t -= 1
            return TIME_LIMIT
        state.nodes += nodes
        state.lb = max(state.lb, theta)
        ev = seen.get(z.mask) or oracle(z)
        seen[z.mask] = ev
        if ev.value < state.ub:
            state.ub, state.z_hat = ev.value, z
        state.record(config.trace, z)
        if state.ub - state.lb <= config.epsilon:
            return EPS_OPTIMAL
        _absorb(master, state, ev)
        if time.monotonic() > deadline:
            return TIME_LIMIT


def _single_tree(master, state, oracle, config, deadline) -> str:
    seen: dict[tuple, Evaluation] = {}
    heap = [(master.theta_lb, 0, {})]
    next_id = 1
    pruned_min = math.inf

    def global_lb(current=math.inf):
        return min([current, pruned_min, state.ub] + [h[0] for h in heap])

    while heap:
        key, node_id, fixings = heapq.heappop(heap)
        state.lb = max(state.lb, global_lb(key))
        if state.ub - state.lb <= config.epsilon:
            pruned_min = min(pruned_min, key)
            state.lb = max(state.lb, global_lb())
            state.record(config.trace, None)
            return EPS_OPTIMAL
        if time.monotonic() > deadline:
            heapq.heappush(heap, (key, node_id, fixings))
            return TIME_LIMIT
        if state.nodes >= config.node_limit:
            heapq.heappush(heap, (key, node_id, fixings))
            return ITER_LIMIT
        state.nodes += 1
        relaxed = master.relax(fixings)
        if relaxed is None:
            continue
        bound, zstar = relaxed
        bound = max(bound, key)
        if bound >= state.ub - config.epsilon:
            pruned_min = min(pruned_min, bound)
            continue
        z = master.certify(fixings, bound, zstar)
        if z is not None:
            if z.mask in seen:
                # the tight cut at z makes this node's value f(z) >= UB
                pruned_min = min(pruned_min, max(bound, seen[z.mask].value))
                continue
            state.t += 1
            ev = oracle(z)
            seen[z.mask] = ev
            if ev.value < state.ub:
                state.ub, state.z_hat = ev.value, z
            _absorb(master, state, ev)
            heapq.heappush(heap, (bound, node_id, fixings))
            state.lb = max(state.lb, global_lb())
            state.record(config.trace, z)
            continue
        if len(fixings) == master.n:
            continue
        i = master.branch_index(fixings, zstar)
        for v in (0, 1):
            heapq.heappush(heap, (bound, next_id, {**fixings, i: v}))
            next_id += 1
    state.lb = max(state.lb, min(pruned_min, state.ub))
    state.record(config.trace, None)
    return EPS_OPTIMAL


def cutting_plane_solve(instance: Instance, config: SolveConfig | None = None) -> SolveResult:
    """Solve the cardinality-constrained DR portfolio problem to epsilon-optimality."""
    config = config or SolveConfig()
    validate_instance(instance)
    start = time.monotonic()
    n, k = instance.n_assets, instance.k
    theta_lb = initial_lower_bound(instance, config.ipm, config.lower_bound)

    def oracle(z: Selection) -> Evaluation:
        return evaluate(instance, z, config.ipm, reduce=config.reduce)

    state, termination, iterations = run_cutting_plane(n, k, theta_lb, oracle, config, start)
    if state.z_hat is None:
        raise TimeLimitReached("no selection evaluated before the time limit")
    primal = recover_portfolio(instance, state.z_hat, config.ipm)
    return SolveResult(
        selection=state.z_hat,
        portfolio=primal.x,
        objective=state.ub,
        lower_bound=min(state.lb, state.ub),
        upper_bound=state.ub,
        iterations=iterations,
        cuts=len(state.cuts),
        nodes=state.nodes,
        wall_time=time.monotonic() - start,
        mode=config.mode,
        termination=termination,
        portfolio_objective=primal.objective,
        history=state.history,
    )


def enumerate_optimum(instance: Instance, settings: IpmSettings | None = None):
    """Best (f, selection) over every support of size k, by brute force."""
    n = instance.n_assets
    best = (math.inf, None)
    for support in combinations(range(n), instance.k):
        z = Selection.from_support(n, support)
        value = solve_lower(instance, z, settings).f_prime
        if value < best[0]:
            best = (value, z)
    return best
