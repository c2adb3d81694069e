import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from drport.numerics import (
    NotPositiveDefinite,
    cholesky,
    min_eigenvalue,
    smat,
    solve_posdef,
    svec,
    svec_position,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_cholesky_identity():
    assert np.array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_two_by_two():
    L = cholesky([[4.0, 2.0], [2.0, 3.0]])
    assert np.allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)
    assert np.allclose(L @ L.T, [[4.0, 2.0], [2.0, 3.0]], atol=1e-12)


def test_cholesky_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, 2.0], [2.0, 1.0]])


def test_solve_posdef_examples():
    assert np.allclose(solve_posdef(np.eye(2), [3.0, -1.0]), [3.0, -1.0])
    assert np.allclose(solve_posdef([[4.0, 2.0], [2.0, 3.0]], [1.0, 0.0]), [0.375, -0.25], atol=1e-14)
    with pytest.raises(NotPositiveDefinite):
        solve_posdef([[2.0, 0.0], [0.0, 0.0]], [1.0, 1.0])


def test_min_eigenvalue_examples():
    assert min_eigenvalue(np.eye(4)) == pytest.approx(1.0)
    assert min_eigenvalue(np.diag([5.0, -2.0, 7.0])) == pytest.approx(-2.0)
    assert min_eigenvalue([[2.0, 1.0], [1.0, 2.0]]) == pytest.approx(1.0)


@st.composite
def posdef(draw, max_dim=6):
    d = draw(st.integers(1, max_dim))
    a = draw(arrays(float, (d, d), elements=finite))
    return a @ a.T + d * np.eye(d)


@given(posdef())
def test_cholesky_reconstructs(a):
    L = cholesky(a)
    assert np.allclose(np.triu(L, 1), 0.0)
    assert np.linalg.norm(L @ L.T - a) <= 1e-10 * np.linalg.norm(a)


@given(posdef(), st.data())
def test_solve_posdef_residual(a, data):
    b = data.draw(arrays(float, a.shape[0], elements=finite))
    x = solve_posdef(a, b)
    assert np.linalg.norm(a @ x - b) <= 1e-10 * (np.linalg.norm(a) * np.linalg.norm(x) + np.linalg.norm(b))


@given(st.integers(1, 6).flatmap(lambda d: arrays(float, (d, d), elements=finite)), finite)
def test_min_eigenvalue_shift(a, t):
    sym = (a + a.T) / 2
    shifted = min_eigenvalue(sym + t * np.eye(sym.shape[0]))
    assert shifted == pytest.approx(min_eigenvalue(sym) + t, abs=1e-8)


@given(st.integers(1, 6).flatmap(lambda d: arrays(float, (d, d), elements=finite)))
def test_svec_preserves_inner_product(a):
    sym = (a + a.T) / 2
    assert np.allclose(smat(svec(sym)), sym)
    assert svec(sym) @ svec(sym) == pytest.approx(np.sum(sym * sym), rel=1e-12, abs=1e-12)


def test_svec_position_is_lower_column_major():
    d = 4
    m = np.zeros((d, d))
    for j in range(d):
        for i in range(j, d):
            m[i, j] = m[j, i] = 10 * i + j
    v = svec(m)
    for j in range(d):
        for i in range(j, d):
            scale = 1.0 if i == j else np.sqrt(2.0)
            assert v[svec_position(d, i, j)] == pytest.approx(scale * m[i, j])
