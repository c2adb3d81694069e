"""Seeded synthetic instances that satisfy the positivity assumptions by construction."""
from __future__ import annotations

import numpy as np

from .model import Instance, Moments, UncertaintySet, default_utility


def random_moments(n: int, rng: np.random.Generator) -> Moments:
    """Mean uniform on [0, 2]; covariance A'A/n + 0.1 I with A uniform on [-1, 1]."""
    mean = rng.uniform(0.0, 2.0, size=n)
    A = rng.uniform(-1.0, 1.0, size=(n, n))
    return Moments(mean, A.T @ A / n + 0.1 * np.eye(n))


def random_instance(n: int, k: int, seed: int | np.random.Generator = 0, *,
                    kappa1: float = 1.0, kappa2: float = 4.0, alpha: float = 10.0,
                    gamma_scaled: float = 10.0, fractions=(0.0, 0.5, 1.0)) -> Instance:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    moments = random_moments(n, rng)
    return Instance(
        moments=moments,
        ambiguity=UncertaintySet(kappa1, kappa2),
        utility=default_utility(moments, alpha, fractions),
        gamma=gamma_scaled / np.sqrt(n),
        k=k,
    )
