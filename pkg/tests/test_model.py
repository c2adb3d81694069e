import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from drport.model import (
    AssumptionViolation,
    Instance,
    ModelError,
    Moments,
    NonPositiveAlpha,
    NonPositiveMeanMax,
    Portfolio,
    Selection,
    TooFewObservations,
    MissingValues,
    UncertaintySet,
    UnsortedPoints,
    UtilityPWL,
    build_utility_tangents,
    default_utility,
    estimate_moments,
    exponential_utility,
    loss,
    validate_instance,
)


def figure_utility(mu_max=1.0, alpha=10.0):
    return build_utility_tangents(mu_max, alpha, [0.0, mu_max / 2, mu_max])


def test_estimate_moments_constant_rows():
    m = estimate_moments([[1.0, 2.0], [1.0, 2.0]])
    assert np.array_equal(m.mean, [1.0, 2.0])
    assert np.array_equal(m.covariance, np.zeros((2, 2)))


def test_estimate_moments_uses_one_over_m():
    m = estimate_moments([[0.0, 0.0], [2.0, 2.0]])
    assert np.allclose(m.mean, [1.0, 1.0])
    assert np.allclose(m.covariance, [[1.0, 1.0], [1.0, 1.0]])


def test_estimate_moments_errors():
    with pytest.raises(TooFewObservations):
        estimate_moments([[1.0, 2.0]])
    with pytest.raises(MissingValues):
        estimate_moments([[1.0, np.nan], [1.0, 2.0]])


@given(arrays(float, st.tuples(st.integers(2, 8), st.integers(1, 4)), elements=st.floats(-5, 5)))
def test_centered_data_has_zero_mean(data):
    centered = data - data.mean(axis=0)
    m = estimate_moments(centered)
    assert np.linalg.norm(m.mean) <= 1e-12 * max(1.0, np.abs(data).max()) * data.size


def test_tangents_at_three_points():
    mu_max = 0.8
    u = figure_utility(mu_max)
    assert u.n_pieces == 3
    assert np.allclose(u.a, [1.0, math.exp(-5.0), math.exp(-10.0)])
    expected_b = [
        0.0,
        exponential_utility(mu_max / 2, mu_max, 10.0) - math.exp(-5.0) * mu_max / 2,
        exponential_utility(mu_max, mu_max, 10.0) - math.exp(-10.0) * mu_max,
    ]
    assert np.allclose(u.b, expected_b)


def test_single_tangent_at_origin():
    u = build_utility_tangents(2.0, 3.0, [0.0])
    assert u.slopes == (1.0,) and u.intercepts == (0.0,)


def test_tangent_errors():
    with pytest.raises(UnsortedPoints):
        build_utility_tangents(1.0, 10.0, [1.0, 0.0])
    with pytest.raises(NonPositiveAlpha):
        build_utility_tangents(1.0, 0.0, [0.0])
    with pytest.raises(NonPositiveMeanMax):
        default_utility(Moments([-1.0, -2.0], np.eye(2)))


@given(st.floats(0.05, 5.0), st.floats(0.1, 30.0), st.lists(st.floats(-3, 3), min_size=1, max_size=30))
def test_tangents_overestimate(mu_max, alpha, ys):
    u = figure_utility(mu_max, alpha)
    y = np.array(ys)
    assert np.all(u(y) >= exponential_utility(y, mu_max, alpha) - 1e-12)


def test_loss_examples():
    x = Portfolio([1.0])
    assert loss(UtilityPWL((1.0,), (0.0,)), x, [0.5]) == pytest.approx(-0.5)
    assert loss(UtilityPWL((1.0, 0.5), (0.0, 0.2)), x, [1.0]) == pytest.approx(-0.7)
    assert loss(figure_utility(), Portfolio([0.5, 0.5]), [0.0, 0.0]) == pytest.approx(0.0)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.floats(0, 1))
def test_loss_is_negative_utility(xi, w):
    u = figure_utility()
    x = Portfolio([w, (1 - w) / 2, (1 - w) / 2])
    y = float(np.dot(xi, x.weights))
    assert loss(u, x, xi) == pytest.approx(-u(y), abs=1e-12)


def valid_instance(**kw):
    args = dict(
        moments=Moments(np.ones(3), np.eye(3)),
        ambiguity=UncertaintySet(1.0, 4.0),
        utility=figure_utility(),
        gamma=1.0,
        k=2,
    )
    args.update(kw)
    return Instance(**args)


def test_validate_accepts():
    assert validate_instance(valid_instance()) is not None


@pytest.mark.parametrize("kw, field", [
    (dict(ambiguity=UncertaintySet(0.0, 4.0)), "kappa1"),
    (dict(ambiguity=UncertaintySet(1.0, 0.5)), "kappa2"),
    (dict(moments=Moments(np.ones(3), np.diag([1.0, 1.0, 0.0]))), "covariance"),
    (dict(utility=UtilityPWL((1.0, 2.0), (0.0, 0.0))), "utility"),
    (dict(utility=UtilityPWL((1.0, -1.0), (0.0, 0.0))), "utility"),
    (dict(gamma=0.0), "gamma"),
    (dict(k=0), "k"),
    (dict(k=4), "k"),
])
def test_validate_rejects(kw, field):
    with pytest.raises(AssumptionViolation) as err:
        validate_instance(valid_instance(**kw))
    assert err.value.field == field


def test_moments_are_read_only():
    m = Moments([1.0, 2.0], np.eye(2))
    with pytest.raises(ValueError):
        m.mean[0] = 3.0


def test_selection_helpers():
    z = Selection.from_support(5, [3, 1])
    assert z.mask == (0, 1, 0, 1, 0)
    assert z.k == 2 and list(z.support) == [1, 3] and list(z.complement) == [0, 2, 4]
    assert str(z) == "01010"
    with pytest.raises(ModelError):
        Selection((0, 2))


def test_portfolio_feasibility():
    assert Portfolio([0.5, 0.5]).is_feasible()
    assert not Portfolio([0.7, 0.5]).is_feasible()
    assert not Portfolio([1.1, -0.1]).is_feasible()
