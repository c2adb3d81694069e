import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import symmetric_instance
from oracles import dr_primal_value, linear_loss_value
from drport.lower_level import (
    ETA_FLOOR,
    LiftedDualSolution,
    LiftInfeasible,
    build_full_dual,
    build_reduced_dual,
    full_dual_objective,
    full_dual_residuals,
    completion_matrix,
    lift,
    recover_portfolio,
    solve_full_dual,
    solve_full_primal,
    solve_lower,
    subgradient_cut,
)
from drport.model import Instance, ModelError, Moments, Selection, UncertaintySet, UtilityPWL
from drport.numerics import min_eigenvalue
from drport.synthetic import random_instance


def with_linear_utility(inst, a=1.0, b=0.0):
    return Instance(inst.moments, inst.ambiguity, UtilityPWL((a,), (b,)), inst.gamma, inst.k)


def bordered(m, v, c):
    """[[m, v], [v', c]]"""
    d = len(v)
    out = np.empty((d + 1, d + 1))
    out[:d, :d] = m
    out[:d, d] = out[d, :d] = v
    out[d, d] = c
    return out


def random_selection(rng, n, k):
    return Selection.from_support(n, sorted(rng.choice(n, size=k, replace=False)))


# -- program construction -----------------------------------------------------

def test_reduced_program_size_small_case():
    inst = with_linear_utility(random_instance(3, 1, 0))
    prog = build_reduced_dual(inst, Selection.from_support(3, [1]))
    psd = [b for b in prog.blocks.values() if b.cone.value == "psd"]
    assert all(b.size == 2 for b in psd)
    assert prog.n_vars <= 15


def test_reduced_program_rejects_wrong_cardinality():
    inst = random_instance(4, 2, 0)
    with pytest.raises(ModelError):
        build_reduced_dual(inst, Selection.from_support(4, [0, 1, 2]))


def test_reduction_is_identity_for_all_ones():
    inst = random_instance(2, 2, 1)
    z = Selection.ones(2)
    a, b = build_reduced_dual(inst, z), build_full_dual(inst, z)
    assert np.array_equal(a.c, b.c) and np.array_equal(a.b, b.b)
    assert (a.A != b.A).nnz == 0
    assert solve_lower(inst, z).f_prime == solve_full_dual(inst, z).f_prime


# -- solve_lower ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_single_piece_matches_first_moment_oracle(seed):
    inst = with_linear_utility(random_instance(5, 3, seed))
    z = Selection.from_support(5, [0, 2, 4])
    idx = z.support
    expected, _ = linear_loss_value(inst.mean[idx], inst.covariance[np.ix_(idx, idx)], inst.gamma, 1.0)
    assert solve_lower(inst, z).f_prime == pytest.approx(expected, rel=1e-5)


@pytest.mark.parametrize("i", range(4))
def test_single_asset_closed_form(i):
    inst = with_linear_utility(random_instance(4, 1, 7), a=0.7, b=0.1)
    z = Selection.from_support(4, [i])
    k1 = inst.ambiguity.kappa1
    expected = 1 / (2 * inst.gamma) - 0.7 * inst.mean[i] - 0.1 + 0.7 * np.sqrt(k1 * inst.covariance[i, i])
    assert solve_lower(inst, z).f_prime == pytest.approx(expected, rel=1e-6)


def test_solve_lower_is_deterministic(small_instance):
    z = Selection.from_support(6, [0, 3, 5])
    assert solve_lower(small_instance, z).f_prime == solve_lower(small_instance, z).f_prime


def test_reduced_solution_invariants(small_instance):
    z = Selection.from_support(6, [1, 2, 4])
    sol = solve_lower(small_instance, z)
    S = z.support
    assert abs(sol.eta.sum() - 1.0) <= 1e-8
    for l in range(small_instance.utility.n_pieces):
        block = bordered(sol.B[l], sol.beta[l], sol.eta[l])
        assert min_eigenvalue(block) >= -1e-7
    sig = small_instance.covariance[np.ix_(S, S)]
    block = bordered(sig, sol.lam, small_instance.ambiguity.kappa1)
    assert min_eigenvalue(block) >= -1e-7


@pytest.mark.parametrize("seed", range(3))
def test_matches_independent_sdp_model(seed):
    inst = random_instance(5, 2, seed)
    support = (1, 3)
    expected, _ = dr_primal_value(inst, support)
    got = solve_lower(inst, Selection.from_support(5, support)).f_prime
    assert got == pytest.approx(expected, rel=1e-6, abs=1e-7)


# -- lift --------------------------------------------------------------------------

def test_lift_identity_for_all_ones():
    inst = random_instance(4, 4, 2)
    z = Selection.ones(4)
    sol = solve_lower(inst, z)
    lifted = lift(inst, z, sol)
    assert np.array_equal(lifted.omega, sol.omega)
    assert np.array_equal(lifted.lam, sol.lam)
    for l in range(3):
        assert np.array_equal(lifted.beta[l], sol.beta[l])


def test_lift_uncorrelated_zero_mean():
    moments = Moments([0.0, 0.0], np.eye(2))
    inst = Instance(moments, UncertaintySet(1.0, 4.0), UtilityPWL((1.0,), (0.0,)), 1.0, 1)
    z = Selection.from_support(2, [0])
    sol = solve_lower(inst, z)
    assert sol.eta[0] == pytest.approx(1.0)
    lifted = lift(inst, z, sol)
    assert lifted.beta[0][1] == pytest.approx(0.0, abs=1e-12)
    assert lifted.lam[1] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_lift_certified_and_objective_preserved(seed):
    inst = random_instance(6, 3, seed)
    z = random_selection(np.random.default_rng(seed), 6, 3)
    sol = solve_lower(inst, z)
    lifted = lift(inst, z, sol)
    assert max(full_dual_residuals(inst, lifted).values()) <= 1e-7
    assert full_dual_objective(inst, z, lifted) == pytest.approx(sol.f_prime, abs=1e-6)
    assert min_eigenvalue(completion_matrix(inst, lifted)) >= -1e-7


def test_lift_rejects_corrupted_solution(small_instance):
    z = Selection.from_support(6, [0, 1, 2])
    sol = solve_lower(small_instance, z)
    sol.eta = sol.eta * 1.5
    with pytest.raises(LiftInfeasible):
        lift(small_instance, z, sol)


def test_lift_zeroes_vanishing_pieces():
    # a piece whose weight is below the floor contributes nothing
    inst = random_instance(5, 2, 4)
    z = Selection.from_support(5, [0, 4])
    sol = solve_lower(inst, z)
    lifted = lift(inst, z, sol)
    for l, eta in enumerate(lifted.eta):
        if eta <= ETA_FLOOR:
            assert not np.any(lifted.beta[l]) and not np.any(lifted.B[l])


# -- cuts ----------------------------------------------------------------------

def _lifted_with_omega(omega):
    n = len(omega)
    return LiftedDualSolution(np.asarray(omega, float), [np.zeros(n)], np.zeros(n), [np.zeros((n, n))], np.ones(1), 0.0)


def test_cut_zero_omega():
    inst = random_instance(2, 1, 0)
    cut = subgradient_cut(inst, Selection.from_support(2, [0]), _lifted_with_omega([0.0, 0.0]), 0.3)
    assert np.array_equal(cut.gradient, [0.0, 0.0])
    assert cut.evaluate(Selection.from_support(2, [1])) == 0.3


def test_cut_gradient_formula():
    base = random_instance(2, 1, 0)
    inst = Instance(base.moments, base.ambiguity, base.utility, 2.0, 1)
    cut = subgradient_cut(inst, Selection.from_support(2, [0]), _lifted_with_omega([1.0, 2.0]), 0.0)
    assert np.allclose(cut.gradient, [-1.0, -4.0])


def test_cuts_underestimate_on_all_pairs():
    inst = random_instance(6, 2, 5)
    sels = [Selection.from_support(6, s) for s in itertools.combinations(range(6), 2)]
    values, cuts = {}, {}
    for z in sels:
        sol = solve_lower(inst, z)
        values[z.mask] = sol.f_prime
        cuts[z.mask] = subgradient_cut(inst, z, lift(inst, z, sol), sol.f_prime)
    rng = np.random.default_rng(0)
    for _ in range(20):
        i, j = rng.choice(len(sels), 2, replace=False)
        zi, zj = sels[i], sels[j]
        assert values[zj.mask] >= cuts[zi.mask].evaluate(zj) - 1e-6
    assert all(np.all(c.gradient <= 0) for c in cuts.values())


# -- full dual / primal ----------------------------------------------------------

@settings(max_examples=10)
@given(st.integers(0, 10_000), st.integers(4, 9), st.data())
def test_reduction_equality(seed, n, data):
    k = data.draw(st.integers(1, n - 1))
    inst = random_instance(n, k, seed)
    z = random_selection(np.random.default_rng(seed), n, k)
    f = solve_full_dual(inst, z).f_prime
    assert abs(f - solve_lower(inst, z).f_prime) <= 1e-6 * (1 + abs(f))


@pytest.mark.parametrize("seed", range(3))
def test_strong_duality(seed):
    inst = random_instance(6, 3, seed)
    z = random_selection(np.random.default_rng(seed + 10), 6, 3)
    dual = solve_full_dual(inst, z).f_prime
    primal = solve_full_primal(inst, z).objective
    assert abs(primal - dual) <= 1e-6 * (1 + abs(dual))


def test_recover_single_asset():
    inst = random_instance(5, 1, 0)
    x = recover_portfolio(inst, Selection.from_support(5, [3])).x.weights
    assert np.allclose(x, np.eye(5)[3], atol=1e-8)


def test_recover_symmetric_is_uniform():
    inst = symmetric_instance(4, 4, sigma2=0.5, c=0.3)
    x = recover_portfolio(inst, Selection.ones(4)).x.weights
    assert np.allclose(x, 0.25, atol=1e-6)


def weight_tol(inst, value, gap=1e-8):
    # the objective is only 1/(2 gamma)-strongly convex in x, so an objective
    # gap g leaves the weights determined to about sqrt(2 gamma g)
    return float(np.sqrt(2 * inst.gamma * gap * (1 + abs(value))))


def lifted_value(inst, z):
    return solve_lower(inst, z).f_prime


@pytest.mark.parametrize("seed", range(3))
def test_recover_matches_full_primal(seed):
    inst = random_instance(6, 3, seed)
    z = random_selection(np.random.default_rng(seed), 6, 3)
    reduced = recover_portfolio(inst, z)
    full = solve_full_primal(inst, z)
    assert np.allclose(reduced.x.weights, full.x.weights, atol=weight_tol(inst, reduced.objective))
    assert reduced.x.is_feasible()
    assert np.all(reduced.x.weights[z.complement] == 0.0)
    assert reduced.objective == pytest.approx(solve_lower(inst, z).f_prime, rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_primal_constraints(seed):
    inst = random_instance(6, 3, seed)
    z = random_selection(np.random.default_rng(seed), 6, 3)
    pr = recover_portfolio(inst, z)
    S = z.support
    mu = inst.mean[S]
    assert np.allclose(pr.p, -pr.q / 2 - pr.Q @ mu, atol=1e-8)
    x = pr.x.weights[S]
    for a, b in zip(inst.utility.a, inst.utility.b):
        v = pr.q / 2 + a * x / 2
        block = bordered(pr.Q, v, pr.r + b)
        assert min_eigenvalue(block) >= -1e-7
    block = bordered(pr.P, pr.p, pr.s)
    assert min_eigenvalue(block) >= -1e-7


@pytest.mark.parametrize("seed", range(3))
def test_stationarity_links_weights_and_multipliers(seed):
    # the weights are gamma times the dual multiplier on the support, and the
    # slack of the omega inequality is complementary to the weights
    inst = random_instance(6, 3, seed)
    z = random_selection(np.random.default_rng(seed), 6, 3)
    lifted = lift(inst, z, solve_lower(inst, z))
    x = recover_portfolio(inst, z).x.weights
    assert np.allclose(x, inst.gamma * z.array * lifted.omega, atol=weight_tol(inst, lifted_value(inst, z)))
    a = inst.utility.a
    rho = lifted.omega - sum(a[l] * lifted.beta[l] for l in range(len(a))) - lifted.pi
    assert np.all(rho >= -1e-7)
    assert abs(rho @ x) <= 1e-6
