import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dlor import linalg as la
from dlor.errors import SingularMatrix

from conftest import well_conditioned

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_svd_identity():
    r = la.svd(np.eye(3))
    assert np.allclose(r.sigma, [1, 1, 1])


def test_svd_diagonal():
    r = la.svd(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(r.sigma, [3, 2, 1])
    assert np.allclose(np.abs(r.u), np.eye(3))
    assert np.allclose(np.abs(r.vt), np.eye(3))


def test_svd_random_reconstruction():
    a = la.random_matrix(8, 8, seed=0, distribution="gaussian")
    r = la.svd(a)
    assert np.max(np.abs(r.reconstruct() - a)) <= 1e-10


@pytest.mark.parametrize("shape", [(5, 3), (3, 5), (1, 4), (6, 1), (7, 7)])
def test_svd_matches_numpy(shape):
    a = np.random.default_rng(1).standard_normal(shape)
    r = la.svd(a)
    assert np.allclose(r.sigma, np.linalg.svd(a, compute_uv=False), atol=1e-12)
    k = min(shape)
    assert np.allclose(r.u.T @ r.u, np.eye(k), atol=1e-12)
    assert np.allclose(r.vt @ r.vt.T, np.eye(k), atol=1e-12)
    assert np.allclose(r.reconstruct(), a, atol=1e-12)


def test_svd_rank_deficient_keeps_orthonormal_u():
    rng = np.random.default_rng(2)
    a = np.outer(rng.standard_normal(6), rng.standard_normal(4))
    r = la.svd(a)
    assert np.allclose(r.u.T @ r.u, np.eye(4), atol=1e-12)
    assert la.numerical_rank(a) == 1
    assert np.allclose(r.reconstruct(), a, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_svd_property_against_numpy(a):
    r = la.svd(a)
    scale = max(1.0, np.abs(a).max())
    assert np.allclose(r.sigma, np.linalg.svd(a, compute_uv=False), atol=1e-10 * scale)
    assert np.all(np.diff(r.sigma) <= 1e-12 * scale)
    assert np.allclose(r.reconstruct(), a, atol=1e-10 * scale)


def test_lu_solve_identity():
    b = np.array([1.0, -2.0, 3.5])
    assert np.array_equal(la.lu_solve(np.eye(3), b), b)


def test_lu_solve_diagonal():
    assert np.allclose(la.lu_solve(np.diag([2.0, 4.0]), [2.0, 8.0]), [1.0, 2.0])


def test_lu_solve_random_well_conditioned():
    a = well_conditioned(16, 3)
    b = np.random.default_rng(4).standard_normal(16)
    x = la.lu_solve(a, b)
    assert np.max(np.abs(a @ x - b)) <= 1e-8
    assert np.allclose(x, np.linalg.solve(a, b))


def test_lu_matrix_rhs_and_inverse():
    a = well_conditioned(6, 5)
    assert np.allclose(la.inverse(a), np.linalg.inv(a))
    b = np.random.default_rng(0).standard_normal((6, 3))
    assert np.allclose(la.lu_solve(a, b), np.linalg.solve(a, b))


def test_lu_singular_raises():
    with pytest.raises(SingularMatrix):
        la.lu_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert not la.is_invertible(np.zeros((3, 3)))
    assert la.det(np.zeros((2, 2))) == 0.0


def test_lu_rejects_non_square():
    with pytest.raises(ValueError):
        la.lu_factor(np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10_000))
def test_det_and_cond_against_numpy(n, seed):
    a = well_conditioned(n, seed)
    assert la.det(a) == pytest.approx(np.linalg.det(a), rel=1e-9)
    assert la.cond(a) == pytest.approx(np.linalg.cond(a), rel=1e-9)
    assert la.cond1(a) == pytest.approx(np.linalg.cond(a, 1), rel=1e-9)


def test_rng_determinism():
    assert np.array_equal(la.random_matrix(4, 4, 7), la.random_matrix(4, 4, 7))
    assert not np.array_equal(la.random_matrix(4, 4, 7), la.random_matrix(4, 4, 8))


def test_gaussian_mean():
    assert abs(la.random_matrix(1000, 1, 0, "gaussian").mean()) < 0.1


def test_spawn_seeds_distinct_and_stable():
    a = la.spawn_seeds(1, 5)
    assert a == la.spawn_seeds(1, 5)
    assert len(set(a)) == 5


def test_as_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        la.as_matrix([[np.nan]])
    with pytest.raises(ValueError):
        la.as_matrix(np.zeros((0, 0)))


def test_matrix_json_round_trip():
    a = np.random.default_rng(0).standard_normal((3, 4))
    assert np.array_equal(la.matrix_from_json(la.matrix_to_json(a)), a)
    with pytest.raises(ValueError):
        la.matrix_from_json({"rows": 2, "cols": 2, "data": [1.0]})


@pytest.mark.parametrize("shape", [(5, 2), (4, 4), (6, 1)])
def test_orthogonal_complement(shape):
    a = np.random.default_rng(3).standard_normal(shape)
    c = la.orthogonal_complement(a)
    assert c.shape == (shape[0], shape[0] - min(shape))
    assert np.allclose(c.T @ c, np.eye(c.shape[1]))
    assert np.allclose(c.T @ a, 0, atol=1e-12)
