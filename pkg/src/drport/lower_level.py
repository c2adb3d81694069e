"""The lower-level problem: the worst-case objective f(z) of a fixed selection.

f(z) is computed from the dual semidefinite program posed only on the k
selected coordinates.  Its solution is then completed to all N coordinates
through the Schur-complement structure of the covariance matrix, which
yields a dual-feasible point of the full problem and hence the subgradient
``-(gamma/2) * omega * omega`` used for cuts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import conic
from .conic import Cone, ConeProgram, IpmSettings
from .model import Instance, Portfolio, Selection, check_selection
from .numerics import cholesky, min_eigenvalue, smat, svec_position

ETA_FLOOR = 1e-9
LIFT_TOL = 1e-7


class SolverFailure(RuntimeError):
    def __init__(self, z: Selection, status, message: str = ""):
        super().__init__(f"lower-level solve failed for z={z} ({getattr(status, 'value', status)}) {message}")
        self.z = z
        self.status = status


class LiftInfeasible(RuntimeError):
    def __init__(self, constraint: str, violation: float, tol: float):
        super().__init__(f"lifted point violates {constraint} by {violation:.3e} (tol {tol:.1e})")
        self.constraint = constraint
        self.violation = violation


@dataclass
class LowerDualSolution:
    """Dual variables on the coordinates ``index`` (the support, or all assets)."""

    index: np.ndarray
    omega: np.ndarray
    B: list[np.ndarray]
    beta: list[np.ndarray]
    eta: np.ndarray
    lam: np.ndarray
    pi: float
    f_prime: float
    conic: conic.ConicSolution | None = field(default=None, repr=False)


@dataclass
class LiftedDualSolution:
    omega: np.ndarray
    beta: list[np.ndarray]
    lam: np.ndarray
    B: list[np.ndarray]
    eta: np.ndarray
    pi: float
    residuals: dict[str, float] = field(default_factory=dict)


@dataclass
class LowerPrimalSolution:
    """Problem-7 variables; matrices live on the coordinates ``index``."""

    index: np.ndarray
    x: Portfolio
    P: np.ndarray
    Q: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: float
    s: float
    objective: float


@dataclass(frozen=True)
class Cut:
    anchor: Selection
    value: float
    gradient: np.ndarray

    def evaluate(self, z) -> float:
        z = np.asarray(getattr(z, "array", z), dtype=float)
        return self.value + float(self.gradient @ (z - self.anchor.array))


# ---------------------------------------------------------------------------
# program construction


def _dual_program(instance: Instance, index: np.ndarray, epigraph: np.ndarray):
    """Dual SDO restricted to the assets ``index``.

    ``epigraph`` lists positions (into ``index``) whose omega enters the
    objective.  Rows of the omega inequality are only needed there: an
    omega entry with zero cost can always be raised to satisfy its row.
    """
    mu = instance.mean[index]
    sigma = instance.covariance[np.ix_(index, index)]
    kappa1, kappa2 = instance.ambiguity.kappa1, instance.ambiguity.kappa2
    a, b = instance.utility.a, instance.utility.b
    m, e, L = index.size, epigraph.size, instance.utility.n_pieces

    prog = ConeProgram()
    omega = prog.add_block("omega", Cone.FREE, e)
    epi = prog.add_block("epi", Cone.RSOC, e + 2)
    slack = prog.add_block("slack", Cone.NONNEG, e)
    Y = [prog.add_block(f"Y{l}", Cone.PSD, m + 1) for l in range(L)]
    W = prog.add_block("W", Cone.PSD, m + 1)
    pi = prog.add_block("pi", Cone.FREE, 1)

    # objective (minimized): (gamma/2) t + sum_l eta_l b_l - pi
    prog.add_cost(prog.col(epi, 0), instance.gamma / 2.0)
    for l in range(L):
        prog.add_entry_cost(Y[l], m, m, b[l])
    prog.add_cost(prog.col(pi), -1.0)

    # 2 * t * (1/2) >= ||omega||^2
    prog.add_row({prog.col(epi, 1): 1.0}, 0.5)
    for i in range(e):
        prog.add_row({prog.col(epi, 2 + i): 1.0, prog.col(omega, i): -1.0}, 0.0)

    def put(row, block, i, j, coef):
        column, scale = prog.entry(block, i, j)
        ConeProgram.accumulate(row, column, coef * scale)

    # omega >= sum_l a_l beta_l + pi 1
    for i, pos in enumerate(epigraph):
        row = {prog.col(omega, i): 1.0, prog.col(slack, i): -1.0, prog.col(pi): -1.0}
        for l in range(L):
            put(row, Y[l], pos, m, -a[l])
        prog.add_row(row, 0.0)

    # sum_l B_l - mu (sum beta)' - (sum beta) mu' = kappa2 Sigma - mu mu'
    for j in range(m):
        for i in range(j, m):
            row = {}
            for l in range(L):
                put(row, Y[l], i, j, 1.0)
                put(row, Y[l], j, m, -mu[i])
                put(row, Y[l], i, m, -mu[j])
            prog.add_row(row, kappa2 * sigma[i, j] - mu[i] * mu[j])

    # sum_l beta_l = lambda + mu
    for i in range(m):
        row = {}
        for l in range(L):
            put(row, Y[l], i, m, 1.0)
        put(row, W, i, m, -1.0)
        prog.add_row(row, mu[i])

    row = {}
    for l in range(L):
        put(row, Y[l], m, m, 1.0)
    prog.add_row(row, 1.0)

    # the data part of [[Sigma, lambda], [lambda', kappa1]]
    for j in range(m):
        for i in range(j, m):
            row = {}
            put(row, W, i, j, 1.0)
            prog.add_row(row, sigma[i, j])
    row = {}
    put(row, W, m, m, 1.0)
    prog.add_row(row, kappa1)
    return prog


def _primal_program(instance: Instance, index: np.ndarray, invest: np.ndarray):
    """Primal inner problem restricted to assets ``index``; ``invest`` are the positions
    (into ``index``) allowed a nonzero weight."""
    mu = instance.mean[index]
    sigma = instance.covariance[np.ix_(index, index)]
    kappa1, kappa2 = instance.ambiguity.kappa1, instance.ambiguity.kappa2
    a, b = instance.utility.a, instance.utility.b
    m, s, L = index.size, invest.size, instance.utility.n_pieces

    prog = ConeProgram()
    x = prog.add_block("x", Cone.NONNEG, s)
    epi = prog.add_block("epi", Cone.RSOC, s + 2)
    Q = prog.add_block("Q", Cone.FREE, m * (m + 1) // 2)
    q = prog.add_block("q", Cone.FREE, m)
    r = prog.add_block("r", Cone.FREE, 1)
    V = [prog.add_block(f"V{l}", Cone.PSD, m + 1) for l in range(L)]
    W = prog.add_block("W", Cone.PSD, m + 1)

    def qcol(i, j):
        return prog.col(Q, svec_position(m, i, j)), (1.0 if i == j else 1.0 / np.sqrt(2.0))

    def put(row, block, i, j, coef):
        column, scale = prog.entry(block, i, j)
        ConeProgram.accumulate(row, column, coef * scale)

    prog.add_cost(prog.col(epi, 0), 1.0 / (2.0 * instance.gamma))
    M = kappa2 * sigma - np.outer(mu, mu)
    for j in range(m):
        for i in range(j, m):
            column, scale = qcol(i, j)
            prog.add_cost(column, M[i, j] * scale * (1.0 if i == j else 2.0))
            prog.add_entry_cost(W, i, j, sigma[i, j])
        prog.add_entry_cost(W, j, m, -mu[j])
    prog.add_entry_cost(W, m, m, kappa1)
    prog.add_cost(prog.col(r), 1.0)

    prog.add_row({prog.col(x, i): 1.0 for i in range(s)}, 1.0)
    prog.add_row({prog.col(epi, 1): 1.0}, 0.5)
    for i in range(s):
        prog.add_row({prog.col(epi, 2 + i): 1.0, prog.col(x, i): -1.0}, 0.0)

    weight_of = {int(pos): i for i, pos in enumerate(invest)}
    for l in range(L):
        for j in range(m):
            for i in range(j, m):
                row = {}
                put(row, V[l], i, j, 1.0)
                column, scale = qcol(i, j)
                ConeProgram.accumulate(row, column, -scale)
                prog.add_row(row, 0.0)
        for i in range(m):
            row = {prog.col(q, i): -0.5}
            put(row, V[l], i, m, 1.0)
            if i in weight_of:
                ConeProgram.accumulate(row, prog.col(x, weight_of[i]), -0.5 * a[l])
            prog.add_row(row, 0.0)
        row = {prog.col(r): -1.0}
        put(row, V[l], m, m, 1.0)
        prog.add_row(row, b[l])

    # p = -q/2 - Q mu
    for i in range(m):
        row = {prog.col(q, i): 0.5}
        put(row, W, i, m, 1.0)
        for j in range(m):
            column, scale = qcol(i, j)
            ConeProgram.accumulate(row, column, mu[j] * scale)
        prog.add_row(row, 0.0)
    return prog


def build_reduced_dual(instance: Instance, z: Selection) -> ConeProgram:
    check_selection(instance, z)
    support = z.support
    return _dual_program(instance, support, np.arange(support.size))


def build_full_dual(instance: Instance, z: Selection) -> ConeProgram:
    check_selection(instance, z)
    return _dual_program(instance, np.arange(instance.n_assets), z.support)


# ---------------------------------------------------------------------------
# solving


def _extract_dual(instance: Instance, prog: ConeProgram, sol, index, epigraph) -> LowerDualSolution:
    m, L = index.size, instance.utility.n_pieces
    omega_epi = prog.value(sol.x, "omega")
    omega = np.zeros(m)
    B, beta, eta = [], [], np.zeros(L)
    for l in range(L):
        Y = prog.value(sol.x, f"Y{l}")
        B.append(Y[:m, :m].copy())
        beta.append(Y[:m, m].copy())
        eta[l] = Y[m, m]
    lam = prog.value(sol.x, "W")[:m, m].copy()
    pi = float(prog.value(sol.x, "pi")[0])
    a = instance.utility.a
    # coordinates outside the epigraph carry no cost: use the smallest feasible omega
    omega[:] = np.maximum(0.0, sum(a[l] * beta[l] for l in range(L)) + pi)
    omega[epigraph] = omega_epi
    return LowerDualSolution(index, omega, B, beta, eta, lam, pi, -sol.primal_objective, sol)


def _solve_dual(instance, z, index, epigraph, settings) -> LowerDualSolution:
    prog = _dual_program(instance, index, epigraph)
    sol = conic.solve(prog, settings or IpmSettings())
    if not sol.optimal:
        raise SolverFailure(z, sol.status)
    return _extract_dual(instance, prog, sol, index, epigraph)


def solve_lower(instance: Instance, z: Selection, settings: IpmSettings | None = None) -> LowerDualSolution:
    """Solve the k-dimensional dual for selection ``z``; ``f_prime`` is f(z)."""
    check_selection(instance, z)
    support = z.support
    return _solve_dual(instance, z, support, np.arange(support.size), settings)


def solve_full_dual(instance: Instance, z: Selection, settings: IpmSettings | None = None) -> LowerDualSolution:
    """Solve the N-dimensional dual (no reduction); ``f_prime`` is f(z)."""
    if z.n != instance.n_assets:
        raise ValueError("selection length does not match the instance")
    return _solve_dual(instance, z, np.arange(instance.n_assets), z.support, settings)


def _solve_primal(instance, z, index, invest, settings) -> LowerPrimalSolution:
    prog = _primal_program(instance, index, invest)
    sol = conic.solve(prog, settings or IpmSettings())
    if not sol.optimal:
        raise SolverFailure(z, sol.status, "(primal)")
    m = index.size
    weights = np.zeros(instance.n_assets)
    weights[index[invest]] = np.maximum(prog.value(sol.x, "x"), 0.0)
    Wm = prog.value(sol.x, "W")
    return LowerPrimalSolution(
        index=index,
        x=Portfolio(weights),
        P=Wm[:m, :m].copy(),
        Q=smat(prog.value(sol.x, "Q")),
        p=Wm[:m, m].copy(),
        q=prog.value(sol.x, "q"),
        r=float(prog.value(sol.x, "r")[0]),
        s=float(Wm[m, m]),
        objective=sol.primal_objective,
    )


def recover_portfolio(instance: Instance, z_hat: Selection, settings: IpmSettings | None = None) -> LowerPrimalSolution:
    """Solve the primal inner problem on the support of ``z_hat``; weights embedded in length N."""
    check_selection(instance, z_hat)
    support = z_hat.support
    return _solve_primal(instance, z_hat, support, np.arange(support.size), settings)


def solve_full_primal(instance: Instance, z: Selection, settings: IpmSettings | None = None) -> LowerPrimalSolution:
    """Primal inner problem in all N dimensions with off-support weights deleted."""
    if z.n != instance.n_assets:
        raise ValueError("selection length does not match the instance")
    return _solve_primal(instance, z, np.arange(instance.n_assets), z.support, settings)


# ---------------------------------------------------------------------------
# lifting


def lift(instance: Instance, z: Selection, sol: LowerDualSolution, tol: float = LIFT_TOL) -> LiftedDualSolution:
    """Complete a reduced dual solution to a certified N-dimensional one."""
    n, L = instance.n_assets, instance.utility.n_pieces
    S, C = z.support, z.complement
    if not np.array_equal(sol.index, S):
        raise ValueError("solution does not belong to the support of z")
    mu, sigma = instance.mean, instance.covariance
    a = instance.utility.a

    factor = cholesky(sigma[np.ix_(S, S)])
    # Psi = Sigma_CS Sigma_SS^{-1}, computed as (Sigma_SS^{-1} Sigma_SC)'
    psi = scipy.linalg.cho_solve((factor, True), sigma[np.ix_(S, C)]).T

    beta_bar = []
    for l in range(L):
        bb = np.zeros(n)
        bb[S] = sol.beta[l]
        bb[C] = psi @ (sol.beta[l] - sol.eta[l] * mu[S]) + sol.eta[l] * mu[C]
        beta_bar.append(bb)
    omega_bar = np.zeros(n)
    omega_bar[S] = sol.omega
    omega_bar[C] = np.maximum(0.0, sum(a[l] * beta_bar[l][C] for l in range(L)) + sol.pi)
    lam_bar = np.zeros(n)
    lam_bar[S] = sol.lam
    lam_bar[C] = psi @ sol.lam

    B_bar = _complete_B(instance, beta_bar, sol.eta)
    lifted = LiftedDualSolution(omega_bar, beta_bar, lam_bar, B_bar, sol.eta.copy(), sol.pi)
    lifted.residuals = full_dual_residuals(instance, lifted)
    scale = max(1.0, float(np.max(np.abs(instance.ambiguity.kappa2 * sigma))))
    worst = max(lifted.residuals, key=lifted.residuals.get)
    if lifted.residuals[worst] > tol * scale:
        raise LiftInfeasible(worst, lifted.residuals[worst], tol * scale)
    return lifted


def _complete_B(instance: Instance, beta_bar: list[np.ndarray], eta: np.ndarray) -> list[np.ndarray]:
    n, L = instance.n_assets, len(beta_bar)
    B = []
    for l in range(L):
        if eta[l] > ETA_FLOOR:
            B.append(np.outer(beta_bar[l], beta_bar[l]) / eta[l])
        else:
            beta_bar[l][:] = 0.0
            B.append(np.zeros((n, n)))
    remainder = _dual_rhs(instance, beta_bar) - sum(B)
    B[0] = B[0] + (remainder + remainder.T) / 2.0
    return B


def _dual_rhs(instance: Instance, beta: list[np.ndarray]) -> np.ndarray:
    mu, sigma = instance.mean, instance.covariance
    total = sum(beta)
    return (instance.ambiguity.kappa2 * sigma - np.outer(mu, mu)
            + np.outer(mu, total) + np.outer(total, mu))


def full_dual_residuals(instance: Instance, d: LiftedDualSolution) -> dict[str, float]:
    """Violation of each constraint family of the N-dimensional dual."""
    a, L = instance.utility.a, instance.utility.n_pieces
    mu, sigma = instance.mean, instance.covariance
    n = instance.n_assets
    res = {}
    res["omega_ineq"] = max(0.0, -float(np.min(d.omega - sum(a[l] * d.beta[l] for l in range(L)) - d.pi)))
    res["B_sum"] = float(np.max(np.abs(sum(d.B) - _dual_rhs(instance, d.beta))))
    res["beta_sum"] = float(np.max(np.abs(sum(d.beta) - d.lam - mu)))
    res["eta_sum"] = abs(float(np.sum(d.eta)) - 1.0)
    worst = 0.0
    for l in range(L):
        block = np.empty((n + 1, n + 1))
        block[:n, :n] = d.B[l]
        block[:n, n] = block[n, :n] = d.beta[l]
        block[n, n] = d.eta[l]
        worst = max(worst, -min_eigenvalue(block))
    res["B_psd"] = max(0.0, worst)
    block = np.empty((n + 1, n + 1))
    block[:n, :n] = sigma
    block[:n, n] = block[n, :n] = d.lam
    block[n, n] = instance.ambiguity.kappa1
    res["lambda_psd"] = max(0.0, -min_eigenvalue(block))
    return res


def full_dual_objective(instance: Instance, z: Selection, d: LiftedDualSolution) -> float:
    w = d.omega[z.support]
    return float(-instance.gamma / 2.0 * (w @ w) - d.eta @ instance.utility.b + d.pi)


def completion_matrix(instance: Instance, d: LiftedDualSolution) -> np.ndarray:
    """kappa2*Sigma minus the rank-one terms of the pieces with eta above the floor.

    Positive semidefinite for every correctly lifted solution.
    """
    mu = instance.mean
    out = instance.ambiguity.kappa2 * instance.covariance.copy()
    for l, eta in enumerate(d.eta):
        if eta > ETA_FLOOR:
            phi = d.beta[l] - eta * mu
            out -= np.outer(phi, phi) / eta
    return out


# ---------------------------------------------------------------------------
# cuts


def subgradient_cut(instance: Instance, z: Selection, lifted: LiftedDualSolution, f_value: float) -> Cut:
    g = -(instance.gamma / 2.0) * lifted.omega * lifted.omega
    return Cut(z, float(f_value), g)


@dataclass
class Evaluation:
    z: Selection
    value: float
    cut: Cut
    lifted: LiftedDualSolution | None = None


def evaluate(instance: Instance, z: Selection, settings: IpmSettings | None = None,
             reduce: bool = True) -> Evaluation:
    """f(z) and its cut, with or without the k-dimensional reduction."""
    if reduce:
        sol = solve_lower(instance, z, settings)
        lifted = lift(instance, z, sol)
    else:
        check_selection(instance, z)
        sol = solve_full_dual(instance, z, settings)
        lifted = LiftedDualSolution(sol.omega, sol.beta, sol.lam, sol.B, sol.eta, sol.pi)
    return Evaluation(z, sol.f_prime, subgradient_cut(instance, z, lifted, sol.f_prime), lifted)
