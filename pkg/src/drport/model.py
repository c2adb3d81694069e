"""Problem instances: moments, ambiguity parameters, utility pieces, selections."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import as_symmetric, min_eigenvalue

DEFAULT_TANGENT_FRACTIONS = (0.0, 0.5, 1.0)


class ModelError(ValueError):
    pass


class TooFewObservations(ModelError):
    pass


class MissingValues(ModelError):
    pass


class NonPositiveAlpha(ModelError):
    pass


class UnsortedPoints(ModelError):
    pass


class NonPositiveMeanMax(ModelError):
    """The exponential utility needs the largest sample mean to be positive."""


class AssumptionViolation(ModelError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Moments:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = as_symmetric(self.covariance)
        if cov.shape != (mean.size, mean.size):
            raise ModelError(f"covariance shape {cov.shape} does not match {mean.size} assets")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def n_assets(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class UncertaintySet:
    kappa1: float = 1.0
    kappa2: float = 4.0


@dataclass(frozen=True)
class UtilityPWL:
    """Concave piecewise-linear utility ``u(y) = min_l a_l * y + b_l``."""

    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "slopes", tuple(float(a) for a in self.slopes))
        object.__setattr__(self, "intercepts", tuple(float(b) for b in self.intercepts))
        if len(self.slopes) != len(self.intercepts) or not self.slopes:
            raise ModelError("utility needs at least one (slope, intercept) pair")

    @property
    def n_pieces(self) -> int:
        return len(self.slopes)

    @property
    def a(self) -> np.ndarray:
        return np.array(self.slopes)

    @property
    def b(self) -> np.ndarray:
        return np.array(self.intercepts)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.min(np.multiply.outer(y, self.a) + self.b, axis=-1)


@dataclass(frozen=True)
class Instance:
    moments: Moments
    ambiguity: UncertaintySet
    utility: UtilityPWL
    gamma: float
    k: int

    @property
    def n_assets(self) -> int:
        return self.moments.n_assets

    @property
    def mean(self) -> np.ndarray:
        return self.moments.mean

    @property
    def covariance(self) -> np.ndarray:
        return self.moments.covariance


@dataclass(frozen=True)
class Selection:
    """Binary asset-selection mask ``z``."""

    mask: tuple[int, ...]

    def __post_init__(self):
        mask = tuple(int(v) for v in np.asarray(self.mask).ravel())
        if any(v not in (0, 1) for v in mask):
            raise ModelError(f"selection entries must be 0 or 1: {mask}")
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_support(cls, n: int, support: Sequence[int]) -> "Selection":
        mask = np.zeros(n, dtype=int)
        mask[list(support)] = 1
        return cls(tuple(mask))

    @classmethod
    def ones(cls, n: int) -> "Selection":
        return cls((1,) * n)

    @property
    def n(self) -> int:
        return len(self.mask)

    @property
    def k(self) -> int:
        return sum(self.mask)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.array)

    @property
    def complement(self) -> np.ndarray:
        return np.flatnonzero(self.array == 0)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.mask, dtype=int)

    def __str__(self) -> str:
        return "".join(map(str, self.mask))


@dataclass(frozen=True)
class Portfolio:
    weights: np.ndarray = field(repr=True)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def is_feasible(self, tol: float = 1e-8) -> bool:
        return bool(self.weights.min() >= -1e-9 and abs(self.weights.sum() - 1.0) <= tol)


# ---------------------------------------------------------------------------


def estimate_moments(returns) -> Moments:
    """Sample mean and covariance with the 1/M normalization.

    ``returns`` is an (M, N) array-like or anything exposing ``.values``.
    """
    data = getattr(returns, "values", returns)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ModelError("returns must be a 2-D array of observations x assets")
    if data.shape[0] < 2:
        raise TooFewObservations(f"need at least 2 observations, got {data.shape[0]}")
    if not np.all(np.isfinite(data)):
        raise MissingValues("returns contain missing or non-finite entries")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / data.shape[0]
    return Moments(mean, cov)


def exponential_utility(y, mu_max: float, alpha: float):
    """Normalized exponential utility ``mu_max * (1 - exp(-alpha*y/mu_max)) / alpha``."""
    return mu_max * (1.0 - np.exp(-alpha * np.asarray(y, dtype=float) / mu_max)) / alpha


def build_utility_tangents(mu_max: float, alpha: float, tangent_points: Sequence[float]) -> UtilityPWL:
    """Tangent lines of the normalized exponential utility at ``tangent_points``."""
    if not alpha > 0:
        raise NonPositiveAlpha(f"alpha must be positive, got {alpha}")
    if not mu_max > 0:
        raise NonPositiveMeanMax(f"mu_max must be positive, got {mu_max}")
    points = [float(y) for y in tangent_points]
    if not points:
        raise ModelError("at least one tangent point is required")
    if any(b <= a for a, b in zip(points, points[1:])):
        raise UnsortedPoints(f"tangent points must be strictly increasing: {points}")
    slopes, intercepts = [], []
    for y in points:
        a = math.exp(-alpha * y / mu_max)
        slopes.append(a)
        intercepts.append(float(exponential_utility(y, mu_max, alpha)) - a * y)
    return UtilityPWL(tuple(slopes), tuple(intercepts))


def default_utility(moments: Moments, alpha: float = 10.0,
                    fractions: Sequence[float] = DEFAULT_TANGENT_FRACTIONS) -> UtilityPWL:
    """Tangents at ``fractions`` of the largest sample mean (0, 1/2, 1 by default)."""
    mu_max = float(np.max(moments.mean))
    if not mu_max > 0:
        raise NonPositiveMeanMax(f"largest sample mean is {mu_max}; the utility needs it positive")
    return build_utility_tangents(mu_max, alpha, [f * mu_max for f in fractions])


def loss(utility: UtilityPWL, x, xi) -> float:
    """Negative utility of the portfolio return ``xi'x``."""
    y = float(np.dot(np.asarray(xi, dtype=float), np.asarray(getattr(x, "weights", x), dtype=float)))
    return float(np.max(-utility.a * y - utility.b))


def validate_instance(instance: Instance) -> Instance:
    """Check the positivity conditions the solver relies on; returns ``instance``."""
    kappa1, kappa2 = instance.ambiguity.kappa1, instance.ambiguity.kappa2
    if not kappa1 > 0:
        raise AssumptionViolation("kappa1", f"must be positive, got {kappa1}")
    if not kappa2 >= 1:
        raise AssumptionViolation("kappa2", f"must be at least 1, got {kappa2}")
    cov = instance.covariance
    n = instance.n_assets
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise AssumptionViolation("covariance", "matrix is not symmetric")
    threshold = 1e-10 * np.trace(cov) / n
    lam = min_eigenvalue(cov)
    if not (lam > threshold and threshold > 0):
        raise AssumptionViolation(
            "covariance", f"smallest eigenvalue {lam:.3e} not above {threshold:.3e}"
        )
    a = instance.utility.a
    if np.any(a <= 0):
        raise AssumptionViolation("utility", "slopes must be positive")
    if np.any(np.diff(a) >= 0):
        raise AssumptionViolation("utility", "slopes must be strictly decreasing")
    if not instance.gamma > 0:
        raise AssumptionViolation("gamma", f"must be positive, got {instance.gamma}")
    if not 1 <= instance.k <= n:
        raise AssumptionViolation("k", f"must lie in [1, {n}], got {instance.k}")
    return instance


def check_selection(instance: Instance, z: Selection) -> None:
    if z.n != instance.n_assets:
        raise ModelError(f"selection has length {z.n}, instance has {instance.n_assets} assets")
    if z.k != instance.k:
        raise ModelError(f"selection has {z.k} assets, cardinality is {instance.k}")
