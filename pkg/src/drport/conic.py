"""Primal-dual interior-point solver for cone programs in standard form.

A :class:`ConeProgram` is

    minimize    c'x
    subject to  A x = b,   x in K = K_1 x ... x K_m

where every variable block K_i is one of ``free``, ``nonneg``, ``soc``
(t >= ||w||), ``rsoc`` (2uv >= ||w||^2, u, v >= 0) or ``psd`` (a symmetric
d x d matrix stored as its svec, so block inner products equal matrix
inner products).  Its dual is

    maximize    b'y
    subject to  c - A'y = s,   s in K*.

The numerical engine is CVXOPT's Nesterov-Todd scaled predictor-corrector
method, which runs on a homogeneous embedding and therefore reports primal
and dual infeasibility certificates.  Singleton equality rows are removed
before the call (the fixed values are folded into the cone offsets) and the
multipliers of those rows are reconstructed afterwards, so the returned
solution is a full primal-dual pair of the program as written.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import cvxopt
import numpy as np
import scipy.sparse as sp
from cvxopt import solvers

from .numerics import min_eigenvalue, smat, svec_indices, svec_position

SQRT2 = math.sqrt(2.0)


class Cone(str, enum.Enum):
    FREE = "free"
    NONNEG = "nonneg"
    SOC = "soc"
    RSOC = "rsoc"
    PSD = "psd"


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERIC_FAILURE = "NumericFailure"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True)
class IpmSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iterations: int = 200
    regularization: float = 1e-10

    def __post_init__(self):
        if not (self.feas_tol > 0 and self.gap_tol > 0 and self.regularization > 0):
            raise ValueError("tolerances and regularization must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class Block:
    name: str
    cone: Cone
    size: int
    offset: int

    @property
    def dim(self) -> int:
        """Number of scalar variables in the block."""
        if self.cone is Cone.PSD:
            return self.size * (self.size + 1) // 2
        return self.size

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.dim)


class ConeProgram:
    """Builder for a standard-form cone program.

    Blocks are appended with :meth:`add_block`; equality rows are added as
    ``{column: coefficient}`` maps.  For PSD blocks use :meth:`entry` to
    address a matrix entry rather than an svec coordinate.
    """

    def __init__(self):
        self.blocks: dict[str, Block] = {}
        self._n = 0
        self._cost: dict[int, float] = {}
        self._rows: list[dict[int, float]] = []
        self._rhs: list[float] = []

    # -- construction -----------------------------------------------------
    def add_block(self, name: str, cone: Cone | str, size: int) -> Block:
        cone = Cone(cone)
        if name in self.blocks:
            raise ValueError(f"duplicate block name {name!r}")
        if size < 1:
            raise ValueError(f"block {name!r} must have positive size")
        if cone is Cone.SOC and size < 1 or cone is Cone.RSOC and size < 2:
            raise ValueError(f"block {name!r} too small for cone {cone.value}")
        block = Block(name, cone, size, self._n)
        self.blocks[name] = block
        self._n += block.dim
        return block

    def col(self, block: Block | str, i: int = 0) -> int:
        block = self._block(block)
        if not 0 <= i < block.dim:
            raise IndexError(f"index {i} outside block {block.name!r}")
        return block.offset + i

    def entry(self, block: Block | str, i: int, j: int) -> tuple[int, float]:
        """Column and scale such that ``M[i, j] == scale * x[column]``."""
        block = self._block(block)
        if block.cone is not Cone.PSD:
            raise ValueError(f"block {block.name!r} is not a PSD block")
        d = block.size
        if not (0 <= i < d and 0 <= j < d):
            raise IndexError(f"entry ({i}, {j}) outside block {block.name!r}")
        scale = 1.0 if i == j else 1.0 / SQRT2
        return block.offset + svec_position(d, i, j), scale

    def add_cost(self, column: int, value: float) -> None:
        self._cost[column] = self._cost.get(column, 0.0) + float(value)

    def add_entry_cost(self, block: Block | str, i: int, j: int, value: float) -> None:
        """Add ``value * M[i, j]`` (and its mirror when i != j) to the objective."""
        column, scale = self.entry(block, i, j)
        self.add_cost(column, value * scale * (1.0 if i == j else 2.0))

    def add_row(self, coeffs: dict[int, float], rhs: float) -> int:
        row = {}
        for column, value in coeffs.items():
            if not 0 <= column < self._n:
                raise IndexError(f"row references undeclared column {column}")
            if value != 0.0:
                row[column] = row.get(column, 0.0) + float(value)
        self._rows.append(row)
        self._rhs.append(float(rhs))
        return len(self._rows) - 1

    @staticmethod
    def accumulate(coeffs: dict[int, float], column: int, value: float) -> None:
        coeffs[column] = coeffs.get(column, 0.0) + value

    def _block(self, block: Block | str) -> Block:
        return self.blocks[block] if isinstance(block, str) else block

    # -- assembled data -----------------------------------------------------
    @property
    def n_vars(self) -> int:
        return self._n

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    @property
    def c(self) -> np.ndarray:
        c = np.zeros(self._n)
        for column, value in self._cost.items():
            c[column] = value
        return c

    @property
    def b(self) -> np.ndarray:
        return np.array(self._rhs, dtype=float)

    @property
    def A(self) -> sp.csr_matrix:
        data, rows, cols = [], [], []
        for r, row in enumerate(self._rows):
            for column, value in row.items():
                rows.append(r)
                cols.append(column)
                data.append(value)
        return sp.csr_matrix((data, (rows, cols)), shape=(len(self._rows), self._n))

    def value(self, x: np.ndarray, block: Block | str) -> np.ndarray:
        """Extract a block from a full vector; PSD blocks come back as matrices."""
        block = self._block(block)
        part = np.asarray(x)[block.slice]
        return smat(part) if block.cone is Cone.PSD else part.copy()


@dataclass
class ConicSolution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    primal_objective: float
    dual_objective: float
    gap: float
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    iterations: int = 0
    settings: IpmSettings = field(default_factory=IpmSettings)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class ResidualReport:
    primal_residual: float
    dual_residual: float
    gap: float
    cone_violation: float

    def worst(self) -> float:
        return max(self.primal_residual, self.dual_residual, self.gap, self.cone_violation)


class SolverError(RuntimeError):
    def __init__(self, status: Status, message: str = ""):
        super().__init__(f"{status.value}: {message}" if message else status.value)
        self.status = status


# ---------------------------------------------------------------------------
# cone geometry


def cone_violation(block: Block, v: np.ndarray) -> float:
    """Distance-like violation of ``v`` from ``block``'s cone (0 when inside).

    Every cone used here is self-dual, so the same routine checks dual slacks.
    """
    if block.cone is Cone.FREE:
        return 0.0
    if block.cone is Cone.NONNEG:
        return float(max(0.0, -v.min()))
    if block.cone is Cone.PSD:
        return max(0.0, -min_eigenvalue(smat(v)))
    if block.cone is Cone.RSOC:
        v = _rsoc_to_soc(v)
    return float(max(0.0, np.linalg.norm(v[1:]) - v[0]))


def _rsoc_to_soc(v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=float, copy=True)
    out[0] = (v[0] + v[1]) / SQRT2
    out[1] = (v[0] - v[1]) / SQRT2
    return out


def verify_certificate(program: ConeProgram, solution: ConicSolution) -> ResidualReport:
    """Recompute residuals of ``solution`` directly from the program data.

    Residuals are absolute infinity norms.  The cone violation covers both
    the primal point and the dual slack; PSD blocks use the minimum
    eigenvalue.
    """
    A, b, c = program.A, program.b, program.c
    x = np.nan_to_num(np.asarray(solution.x, dtype=float))
    y = np.nan_to_num(np.asarray(solution.y, dtype=float))
    s = np.nan_to_num(np.asarray(solution.s, dtype=float))
    primal = float(np.max(np.abs(A @ x - b), initial=0.0))
    dual = float(np.max(np.abs(c - A.T @ y - s), initial=0.0))
    gap = abs(float(c @ x) - float(b @ y))
    worst = 0.0
    for block in program.blocks.values():
        worst = max(worst, cone_violation(block, x[block.slice]))
        if block.cone is Cone.FREE:
            worst = max(worst, float(np.max(np.abs(s[block.slice]))))
        else:
            worst = max(worst, cone_violation(block, s[block.slice]))
    return ResidualReport(primal, dual, gap, worst)


# ---------------------------------------------------------------------------
# translation to CVXOPT


def _cone_map(program: ConeProgram):
    """Sparse map T from variables to CVXOPT's cone vector, plus the dims dict.

    CVXOPT orders cones as all nonnegatives, then each second-order cone,
    then each PSD block in column-major full storage.  Only the lower
    triangle of a PSD block is written; CVXOPT reads nothing else.
    """
    nonneg = [blk for blk in program.blocks.values() if blk.cone is Cone.NONNEG]
    socs = [blk for blk in program.blocks.values() if blk.cone in (Cone.SOC, Cone.RSOC)]
    psds = [blk for blk in program.blocks.values() if blk.cone is Cone.PSD]
    rows, cols, vals = [], [], []
    r = 0
    for blk in nonneg:
        for i in range(blk.dim):
            rows.append(r + i)
            cols.append(blk.offset + i)
            vals.append(1.0)
        r += blk.dim
    for blk in socs:
        if blk.cone is Cone.RSOC:
            o = blk.offset
            rows += [r, r, r + 1, r + 1]
            cols += [o, o + 1, o, o + 1]
            vals += [1 / SQRT2, 1 / SQRT2, 1 / SQRT2, -1 / SQRT2]
            start = 2
        else:
            start = 0
        for i in range(start, blk.dim):
            rows.append(r + i)
            cols.append(blk.offset + i)
            vals.append(1.0)
        r += blk.dim
    for blk in psds:
        d = blk.size
        ii, jj = svec_indices(d)
        for p, (i, j) in enumerate(zip(ii, jj)):
            rows.append(r + j * d + i)
            cols.append(blk.offset + p)
            vals.append(1.0 if i == j else 1.0 / SQRT2)
        r += d * d
    dims = {
        "l": sum(blk.dim for blk in nonneg),
        "q": [blk.dim for blk in socs],
        "s": [blk.size for blk in psds],
    }
    T = sp.csc_matrix((vals, (rows, cols)), shape=(r, program.n_vars))
    return T, dims, psds


def _to_cvxopt(m: sp.spmatrix):
    m = sp.coo_matrix(m)
    return cvxopt.spmatrix(
        m.data.tolist(), m.row.tolist(), m.col.tolist(), size=m.shape, tc="d"
    )


def _find_fixed(A: sp.csr_matrix, b: np.ndarray):
    """Columns pinned by rows with a single nonzero."""
    fixed: dict[int, float] = {}
    owner: dict[int, int] = {}
    counts = np.diff(A.indptr)
    for r in np.flatnonzero(counts == 1):
        k = A.indptr[r]
        column, coef = int(A.indices[k]), float(A.data[k])
        value = b[r] / coef
        if column in fixed:
            if abs(fixed[column] - value) > 1e-12 * max(1.0, abs(value)):
                return None, None
            continue
        fixed[column] = value
        owner[column] = int(r)
    return fixed, owner


def _empty_solution(program: ConeProgram, status: Status, settings: IpmSettings,
                    iterations: int = 0) -> ConicSolution:
    nan = np.full(program.n_vars, np.nan)
    return ConicSolution(status, nan, np.full(program.n_rows, np.nan), nan.copy(),
                         math.nan, math.nan, math.nan, iterations=iterations,
                         settings=settings)


def solve(program: ConeProgram, settings: IpmSettings | None = None) -> ConicSolution:
    """Solve ``program``; deterministic for identical inputs and settings."""
    settings = settings or IpmSettings()
    A, b, c = program.A, program.b, program.c
    n, p = program.n_vars, program.n_rows

    fixed, owner = _find_fixed(A, b)
    if fixed is None:
        return _empty_solution(program, Status.INFEASIBLE, settings)
    fixed_cols = np.array(sorted(fixed), dtype=int)
    keep = np.setdiff1d(np.arange(n), fixed_cols)
    x_fixed = np.zeros(n)
    x_fixed[fixed_cols] = [fixed[j] for j in fixed_cols]

    T, dims, psds = _cone_map(program)
    # rows that still carry information after the fixed columns are removed
    A_keep = A[:, keep].tocsr()
    b_keep = b - A @ x_fixed
    live = np.flatnonzero(np.diff(A_keep.indptr) > 0)
    dead = np.setdiff1d(np.arange(p), live)
    if dead.size and np.max(np.abs(b_keep[dead])) > 1e-9 * max(1.0, np.max(np.abs(b))):
        return _empty_solution(program, Status.INFEASIBLE, settings)

    T_keep = T[:, keep]
    G = -T_keep
    h = T @ x_fixed
    kw = dict(
        G=_to_cvxopt(G),
        h=cvxopt.matrix(h),
        dims=dims,
    )
    if live.size:
        kw["A"] = _to_cvxopt(A_keep[live])
        kw["b"] = cvxopt.matrix(b_keep[live])
    c_keep = cvxopt.matrix(c[keep]) if keep.size else None
    if keep.size == 0:
        x = x_fixed.copy()
        return _finish(program, settings, x, None, None, 0, "optimal", owner, live, T, psds, dims)

    solution = None
    # CVXOPT measures its gap differently and its default KKT solver can stall
    # near a degenerate optimum; escalate to tighter stopping rules and the
    # regularized LDL solver before giving up
    attempts = [(1.0, False), (1.0, True), (1e-2, True), (1e-4, True)]
    for tighten, regularized in attempts:
        result = _conelp(c_keep, kw, settings, tighten, regularized)
        if result is None:
            continue
        status = result["status"]
        iters = int(result["iterations"])
        if status == "primal infeasible":
            return _empty_solution(program, Status.INFEASIBLE, settings, iters)
        if status == "dual infeasible":
            return _empty_solution(program, Status.UNBOUNDED, settings, iters)
        x = x_fixed.copy()
        x[keep] = np.array(result["x"]).ravel()
        y_live = -np.array(result["y"]).ravel() if live.size else np.zeros(0)
        z = np.array(result["z"]).ravel()
        candidate = _finish(program, settings, x, y_live, z, iters, status, owner, live, T, psds, dims)
        if solution is None or candidate.optimal:
            solution = candidate
        if candidate.optimal:
            break
    if solution is None:
        return _empty_solution(program, Status.NUMERIC_FAILURE, settings)
    return solution


def _conelp(c, kw, settings: IpmSettings, tighten: float, regularized: bool):
    options = {
        "show_progress": False,
        "maxiters": settings.max_iterations,
        "abstol": settings.gap_tol * tighten,
        "reltol": settings.gap_tol * tighten,
        "feastol": settings.feas_tol * tighten,
        "refinement": 2,
    }
    if not regularized:
        try:
            return solvers.conelp(c, options=options, **kw)
        except (ArithmeticError, ValueError):
            return None
    for reg in (settings.regularization, 1e-8):
        # static regularization handles rank-deficient or singular KKT systems
        try:
            return solvers.conelp(c, kktsolver="ldl", options={**options, "kktreg": reg}, **kw)
        except (ArithmeticError, ValueError):
            continue
    return None


def _finish(program, settings, x, y_live, z, iters, raw_status, owner, live, T, psds, dims):
    A, b, c = program.A, program.b, program.c
    y = np.zeros(program.n_rows)
    if y_live is not None and live.size:
        y[live] = y_live
    if z is not None:
        s = _pull_back(T, z, dims)
    else:
        s = c - A.T @ y
    # multipliers of singleton rows make the pinned columns dual feasible
    At = A.tocsc()
    for column in sorted(owner):
        r = owner[column]
        col = At[:, column]
        others = sum(col.data[k] * y[col.indices[k]] for k in range(col.nnz) if col.indices[k] != r)
        coef = A[r, column]
        y[r] = (c[column] - s[column] - others) / coef
    for blk in program.blocks.values():
        if blk.cone is Cone.FREE:
            s[blk.slice] = c[blk.slice] - (A.T @ y)[blk.slice]

    pobj = float(c @ x)
    dobj = float(b @ y)
    pres = float(np.max(np.abs(A @ x - b), initial=0.0))
    dres = float(np.max(np.abs(c - A.T @ y - s), initial=0.0))
    gap = abs(pobj - dobj)
    rel_p = pres / (1.0 + float(np.max(np.abs(b), initial=0.0)))
    rel_d = dres / (1.0 + float(np.max(np.abs(c), initial=0.0)))
    ok = (rel_p <= settings.feas_tol and rel_d <= settings.feas_tol
          and gap <= settings.gap_tol * (1.0 + abs(pobj)))
    if raw_status == "optimal" or ok:
        status = Status.OPTIMAL if ok else Status.NUMERIC_FAILURE
    elif iters >= settings.max_iterations:
        status = Status.ITER_LIMIT
    else:
        status = Status.NUMERIC_FAILURE
    return ConicSolution(status, x, y, s, pobj, dobj, gap, pres, dres, iters, settings)


def _pull_back(T: sp.csc_matrix, z: np.ndarray, dims) -> np.ndarray:
    """Apply T' to a CVXOPT cone vector whose PSD blocks are stored in full."""
    z = z.copy()
    off = dims["l"] + sum(dims["q"])
    for d in dims["s"]:
        mat = z[off:off + d * d].reshape(d, d, order="F")
        # CVXOPT pairs PSD blocks by trace(ZS) using the lower triangle with
        # off-diagonals counted twice
        low = np.tril(mat) + np.tril(mat.T, -1)
        z[off:off + d * d] = low.ravel(order="F")
        off += d * d
    return np.asarray(T.T @ z).ravel()
