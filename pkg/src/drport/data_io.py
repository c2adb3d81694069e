"""Return histories, OR-Library moment files and result JSON."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .model import ModelError, Moments

CONFLICT_TOL = 1e-9
RHO_TOL = 1e-12


class DataError(ModelError):
    pass


class EmptyFile(DataError):
    pass


class NoUsableColumns(DataError):
    pass


class MalformedHeader(DataError):
    pass


class MissingCorrelation(DataError):
    pass


class CorrelationOutOfRange(DataError):
    pass


@dataclass(frozen=True)
class ReturnMatrix:
    """M x N period returns with asset labels and opaque period keys."""

    values: np.ndarray
    labels: tuple[str, ...]
    periods: tuple[str, ...]
    dropped: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1:
            raise DataError("returns must be a non-empty 2-D array")
        if values.shape[1] != len(self.labels):
            raise DataError(f"{values.shape[1]} columns but {len(self.labels)} labels")
        if values.shape[0] != len(self.periods):
            raise DataError(f"{values.shape[0]} rows but {len(self.periods)} period keys")
        if not np.all(np.isfinite(values)):
            raise DataError("returns contain missing entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "periods", tuple(self.periods))

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    def window(self, start: int, stop: int) -> "ReturnMatrix":
        return ReturnMatrix(self.values[start:stop], self.labels, self.periods[start:stop])


def _read_text(source) -> str:
    if hasattr(source, "read"):
        return source.read()
    with open(os.fspath(source), newline="") as fh:
        return fh.read()


def _number(cell: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        return math.nan
    return value if math.isfinite(value) else math.nan


def parse_returns_csv(source) -> ReturnMatrix:
    """Read a header-labelled return table; columns with any gap are dropped whole."""
    rows = [r for r in csv.reader(io.StringIO(_read_text(source))) if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise EmptyFile("no data rows")
    header = [c.strip() for c in rows[0][1:]]
    body = rows[1:]
    n = len(header)
    periods = [r[0].strip() for r in body]
    table = np.full((len(body), n), math.nan)
    for m, r in enumerate(body):
        cells = r[1:]
        for j in range(min(n, len(cells))):
            table[m, j] = _number(cells[j].strip())
    keep = np.all(np.isfinite(table), axis=0)
    if not keep.any():
        raise NoUsableColumns(f"all {n} columns have missing or non-numeric cells")
    labels = [h for h, k in zip(header, keep) if k]
    return ReturnMatrix(table[:, keep], labels, periods, dropped=int(n - keep.sum()))


def parse_orlibrary(source, mean_scale: float = 1.0, cov_scale: float = 1.0) -> Moments:
    """OR-Library portfolio file: N, then (mean, sd) rows, then (i, j, rho) triplets."""
    tokens = _read_text(source).split()
    if not tokens:
        raise MalformedHeader("empty file")
    try:
        n = int(tokens[0])
    except ValueError:
        raise MalformedHeader(f"first token {tokens[0]!r} is not an asset count") from None
    if n < 1 or len(tokens) < 1 + 2 * n:
        raise MalformedHeader(f"expected {n} (mean, sd) rows")
    stats = np.array(tokens[1:1 + 2 * n], dtype=float).reshape(n, 2)
    mean, sd = stats[:, 0], stats[:, 1]
    rest = tokens[1 + 2 * n:]
    if len(rest) % 3:
        raise MalformedHeader("correlation section is not made of (i, j, rho) triplets")

    # upper[a, b] holds pairs listed as (i < j), lower[a, b] those listed as (i > j)
    upper = np.full((n, n), math.nan)
    lower = np.full((n, n), math.nan)
    for t in range(0, len(rest), 3):
        i, j, r = int(rest[t]) - 1, int(rest[t + 1]) - 1, float(rest[t + 2])
        if not (0 <= i < n and 0 <= j < n):
            raise MalformedHeader(f"asset index out of range in triplet {t // 3 + 1}")
        if abs(r) > 1.0 + RHO_TOL:
            raise CorrelationOutOfRange(f"rho[{i + 1},{j + 1}] = {r}")
        if i == j:
            continue
        store = upper if i < j else lower
        a, b = min(i, j), max(i, j)
        if not math.isnan(store[a, b]) and abs(store[a, b] - r) > CONFLICT_TOL:
            raise DataError(f"pair ({a + 1}, {b + 1}) listed twice with different values")
        store[a, b] = r
    both = ~np.isnan(upper) & ~np.isnan(lower)
    if np.any(np.abs(upper[both] - lower[both]) > CONFLICT_TOL):
        a, b = np.argwhere(both & (np.abs(np.nan_to_num(upper - lower)) > CONFLICT_TOL))[0]
        raise DataError(f"conflicting correlations for pair ({a + 1}, {b + 1})")
    tri = np.where(np.isnan(upper), lower, upper)
    absent = np.argwhere(np.triu(np.isnan(tri), 1))
    if absent.size:
        a, b = absent[0]
        raise MissingCorrelation(f"no correlation for pair ({a + 1}, {b + 1})")
    rho = np.triu(np.nan_to_num(tri), 1)
    rho = rho + rho.T + np.eye(n)
    cov = cov_scale * rho * np.outer(sd, sd)
    return Moments(mean_scale * mean, cov)


def gap_percent(upper: float, lower: float) -> float:
    return 100.0 * (upper - lower) / max(abs(upper), 1e-12)


def result_record(result) -> dict:
    weights = result.portfolio.weights if hasattr(result.portfolio, "weights") else result.portfolio
    return {
        "obj": float(result.objective),
        "gap_pct": gap_percent(result.upper_bound, result.lower_bound),
        "time_s": float(result.wall_time),
        "cuts": int(result.cuts),
        "nodes": int(result.nodes),
        "mode": result.mode,
        "selection": [int(i) for i in result.selection.support],
        "weights": [float(w) for w in np.asarray(weights, dtype=float)],
        "iterations": int(result.iterations),
        "termination": result.termination,
        "lower_bound": float(result.lower_bound),
        "upper_bound": float(result.upper_bound),
    }


def write_result_json(result, sink) -> None:
    """Serialize a solve result; floats are written with full repr precision."""
    text = json.dumps(result_record(result), indent=2) + "\n"
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(os.fspath(sink), "w") as fh:
            fh.write(text)


def write_returns_csv(matrix: ReturnMatrix, sink) -> None:
    writer = csv.writer(sink)
    writer.writerow(["period", *matrix.labels])
    for key, row in zip(matrix.periods, matrix.values):
        writer.writerow([key, *(repr(float(v)) for v in row)])
