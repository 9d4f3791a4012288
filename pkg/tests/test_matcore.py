import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from dirnet.errors import DomainError, IntegrityError, ShapeError
from dirnet.matcore import (CsrMatrix, as_dense, frob_norm_sq, matmul, soft_threshold, to_csr,
                            to_dense)


def _sparse(rng, rows, cols, density):
    return rng.standard_normal((rows, cols)) * (rng.random((rows, cols)) < density)


@given(rows=st.integers(1, 12), cols=st.integers(1, 12), density=st.floats(0, 1),
       seed=st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_csr_layout_matches_scipy(rows, cols, density, seed):
    A = _sparse(np.random.default_rng(seed), rows, cols, density)
    z = CsrMatrix.from_dense(A).validate()
    ref = sp.csr_matrix(A)
    ref.eliminate_zeros()
    ref.sort_indices()
    assert np.array_equal(z.row_ptr, ref.indptr)
    assert np.array_equal(z.col_idx, ref.indices)
    assert np.array_equal(z.vals, ref.data)
    assert np.array_equal(z.to_dense(), A)
    assert np.array_equal(z.mask(), A != 0)


def test_products_match_scipy(rng):
    A = _sparse(rng, 20, 15, 0.2)
    z = CsrMatrix.from_dense(A)
    x = rng.standard_normal(15)
    X = rng.standard_normal((15, 4))
    np.testing.assert_allclose(z.matvec(x), sp.csr_matrix(A) @ x, atol=1e-14)
    np.testing.assert_allclose(z.matmat(X), sp.csr_matrix(A) @ X, atol=1e-14)


def test_product_shape_errors(rng):
    z = CsrMatrix.from_dense(np.eye(3))
    with pytest.raises(ShapeError):
        z.matvec(np.ones(4))
    with pytest.raises(ShapeError):
        z.matmat(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_from_dense_eps_drops_small():
    z = CsrMatrix.from_dense(np.array([[1e-9, 2.0], [0.5, -1e-12]]), eps=1e-6)
    assert z.nnz == 2
    assert np.array_equal(z.col_idx, [1, 0])


def test_empty_and_equals():
    e = CsrMatrix.empty(3, 4)
    assert e.nnz == 0 and np.array_equal(e.to_dense(), np.zeros((3, 4)))
    a = CsrMatrix.from_dense(np.eye(3))
    assert a.equals(CsrMatrix.from_dense(np.eye(3)))
    assert not a.equals(CsrMatrix.from_dense(2 * np.eye(3)))


@pytest.mark.parametrize("mutate, msg", [
    (lambda rp, ci, v: (rp[:-1], ci, v), "rows"),
    (lambda rp, ci, v: (rp, ci[::-1].copy(), v), "increasing"),
    (lambda rp, ci, v: (rp, ci + 10, v), "range"),
    (lambda rp, ci, v: (rp, ci, np.where(np.arange(v.size) == 0, 0.0, v)), "non-zero"),
    (lambda rp, ci, v: (rp, ci, np.where(np.arange(v.size) == 0, np.nan, v)), "finite"),
])
def test_validate_rejects_broken_structures(mutate, msg):
    A = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 3.0]])
    z = CsrMatrix.from_dense(A)
    rp, ci, v = mutate(z.row_ptr.copy(), z.col_idx.copy(), z.vals.copy())
    with pytest.raises(IntegrityError):
        CsrMatrix(2, 3, rp, ci, v).validate()


def test_soft_threshold_definition():
    b = np.array([-3.0, -0.5, 0.0, 0.2, 2.5])
    np.testing.assert_array_equal(soft_threshold(b, 1.0), [-2.0, 0.0, 0.0, 0.0, 1.5])
    assert soft_threshold(5.0, np.inf) == 0.0
    with pytest.raises(DomainError):
        soft_threshold(b, -1.0)


def test_as_dense_rejects_bad_input():
    with pytest.raises(ShapeError):
        as_dense(np.ones(3))
    with pytest.raises(DomainError):
        as_dense([[1.0, np.inf]])


def _naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_small_cases(rng):
    A = rng.standard_normal((3, 5))
    assert np.array_equal(matmul(np.eye(3), A), A)
    np.testing.assert_array_equal(matmul(np.ones((2, 3)), np.ones((3, 2))), np.full((2, 2), 3.0))
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 6))
    np.testing.assert_allclose(matmul(a, b), _naive_matmul(a, b), atol=1e-12, rtol=0)


def test_csr_matvec_trivial_and_densified(rng):
    x = rng.standard_normal(4)
    A = np.zeros((3, 4))
    A[1, 2] = 2.0
    out = CsrMatrix.from_dense(A).matvec(x)
    assert out[0] == 0.0 and out[2] == 0.0 and out[1] == 2.0 * x[2]
    assert np.array_equal(CsrMatrix.from_dense(np.eye(4)).matvec(x), x)
    for _ in range(50):
        S = _sparse(rng, 8, 8, 0.3)
        v = rng.standard_normal(8)
        np.testing.assert_allclose(CsrMatrix.from_dense(S).matvec(v), S @ v, atol=1e-12, rtol=0)


def test_norm_and_conversion_round_trip(rng):
    assert frob_norm_sq(np.eye(2)) == 2.0
    assert to_csr(np.zeros((3, 3))).nnz == 0
    for _ in range(100):
        A = _sparse(rng, int(rng.integers(1, 9)), int(rng.integers(1, 9)), 0.4)
        assert np.array_equal(to_dense(to_csr(A, 0.0)), A)


def test_soft_threshold_examples():
    assert soft_threshold(1.2, 0.5) == pytest.approx(0.7)
    assert soft_threshold(-0.3, 0.5) == 0.0
    xs = np.linspace(-3, 3, 13)
    assert np.array_equal(soft_threshold(xs, 0.0), xs)
