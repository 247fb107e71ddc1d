import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse as sp

from helpers import random_model, random_slice_mask, random_sparse
from stsketch.tensor import (
    DenseTensor,
    DimensionError,
    KruskalModel,
    MaskTensor,
    SparseTensor,
    fold,
    khatri_rao,
    matricize,
    mttkrp,
    reconstruct_masked,
)

dims_st = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))


# ---------------------------------------------------------------- khatri_rao

def test_khatri_rao_worked_example():
    M1 = np.array([[1, 2], [3, 4]])
    M2 = np.array([[0, 1], [1, 0]])
    np.testing.assert_array_equal(khatri_rao(M1, M2), [[0, 2], [1, 0], [0, 4], [3, 0]])


def test_khatri_rao_scalar_identity():
    np.testing.assert_array_equal(khatri_rao([[1.0]], [[1.0]]), [[1.0]])


def test_khatri_rao_columns_are_kronecker_products(rng):
    M1, M2 = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    K = khatri_rao(M1, M2)
    for r in range(4):
        np.testing.assert_allclose(K[:, r], np.kron(M1[:, r], M2[:, r]), rtol=0, atol=1e-14)


def test_khatri_rao_column_mismatch():
    with pytest.raises(DimensionError):
        khatri_rao(np.ones((2, 2)), np.ones((2, 3)))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_khatri_rao_hadamard_gram_identity(n1, n2, R, seed):
    rng = np.random.default_rng(seed)
    M1, M2 = rng.normal(size=(n1, R)), rng.normal(size=(n2, R))
    K = khatri_rao(M1, M2)
    np.testing.assert_allclose(K.T @ K, (M1.T @ M1) * (M2.T @ M2), rtol=1e-10, atol=1e-10)


# ---------------------------------------------------------------- matricize / fold

def test_matricize_small_example():
    X = np.arange(1, 9, dtype=float).reshape(2, 2, 2)
    X1 = matricize(DenseTensor(X), 1)
    # column j + J*k holds the fiber X[:, j, k]
    assert X1.shape == (2, 4)
    np.testing.assert_array_equal(X1[:, 0], X[:, 0, 0])
    np.testing.assert_array_equal(X1[:, 1], X[:, 1, 0])
    np.testing.assert_array_equal(X1[:, 2], X[:, 0, 1])


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_fold_unfold_round_trip(rng, mode):
    X = rng.normal(size=(3, 4, 5))
    back = fold(matricize(DenseTensor(X), mode), mode, X.shape)
    np.testing.assert_array_equal(back.data, X)


def test_rank_one_unfolding_matches_kronecker(rng):
    a, b, c = rng.normal(size=4), rng.normal(size=3), rng.normal(size=2)
    m = KruskalModel(a[:, None], b[:, None], c[:, None])
    X1 = matricize(DenseTensor(m.full()), 1)
    np.testing.assert_allclose(X1, np.outer(a, np.kron(c, b)), atol=1e-12)


@pytest.mark.parametrize("mode,kr", [(1, "CB"), (2, "CA"), (3, "BA")])
def test_unfolding_matches_kruskal_form(rng, mode, kr):
    m = random_model(rng, (4, 3, 5), 2)
    f = dict(zip("ABC", m.factors))
    own = {1: "A", 2: "B", 3: "C"}[mode]
    expected = f[own] @ khatri_rao(f[kr[0]], f[kr[1]]).T
    np.testing.assert_allclose(matricize(DenseTensor(m.full()), mode), expected, atol=1e-12)


def test_matricize_zero_tensor():
    Z = matricize(DenseTensor.zeros((2, 3, 4)), 2)
    assert Z.shape == (3, 8) and not Z.any()


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_sparse_unfolding_is_sparse_and_matches_dense(rng, mode):
    T, X = random_sparse(rng, (4, 3, 5))
    S = matricize(T, mode)
    assert sp.issparse(S)
    np.testing.assert_array_equal(S.toarray(), matricize(DenseTensor(X), mode))


def test_matricize_invalid_mode():
    with pytest.raises(ValueError):
        matricize(DenseTensor.zeros((2, 2, 2)), 4)


# ---------------------------------------------------------------- types

def test_dense_rejects_non_finite():
    X = np.zeros((2, 2, 2))
    X[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        DenseTensor(X)


def test_sparse_rejects_duplicates_and_out_of_range():
    with pytest.raises(ValueError):
        SparseTensor.from_entries((2, 2, 2), [(0, 0, 0, 1.0), (0, 0, 0, 2.0)])
    with pytest.raises(IndexError):
        SparseTensor.from_entries((2, 2, 2), [(2, 0, 0, 1.0)])


def test_sparse_iteration_order_is_sorted():
    T = SparseTensor.from_entries((3, 3, 3), [(2, 0, 0, 1.0), (0, 2, 1, 2.0), (0, 0, 2, 3.0)])
    assert [e[:3] for e in T.entries()] == [(0, 0, 2), (0, 2, 1), (2, 0, 0)]
    assert T.nnz == 3


@given(dims_st, st.integers(0, 2**31 - 1))
def test_dense_sparse_round_trip(dims, seed):
    rng = np.random.default_rng(seed)
    _, X = random_sparse(rng, dims)
    np.testing.assert_array_equal(DenseTensor(X).to_sparse().to_dense().data, X)
    assert DenseTensor(X).to_sparse(keep_zeros=True).nnz == X.size


def test_mask_membership_is_total_and_slice_structured(rng):
    W = MaskTensor((4, 2, 3), frozenset({0, 2}))
    dense = W.to_dense()
    for i in range(4):
        for j in range(2):
            for k in range(3):
                assert W(i, j, k) == dense[i, j, k] == (1 if i in (0, 2) else 0)
    with pytest.raises(IndexError):
        W(4, 0, 0)


def test_mask_with_entries():
    W = MaskTensor((3, 2, 2), frozenset({1}), np.array([[0, 1, 1], [1, 0, 0]]))
    assert not W.is_slice_structured
    assert W(0, 1, 1) == 1 and W(0, 0, 0) == 0
    assert W.count() == 5
    subs = W.observed_subs()
    assert np.all(np.diff(np.ravel_multi_index(tuple(subs.T), W.dims)) > 0)


def test_kruskal_entry_formula(rng):
    m = random_model(rng, (3, 4, 2), 3, weights=True)
    X = m.full()
    i, j, k = 2, 1, 1
    expected = sum(m.weights[r] * m.A[i, r] * m.B[j, r] * m.C[k, r] for r in range(3))
    assert X[i, j, k] == pytest.approx(expected, abs=1e-12)


def test_kruskal_validates_columns():
    with pytest.raises(DimensionError):
        KruskalModel(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)))


# ---------------------------------------------------------------- mttkrp

def _dense_mttkrp(X, model, mode):
    A, B, C = model.factors
    kr = {1: khatri_rao(C, B), 2: khatri_rao(C, A), 3: khatri_rao(B, A)}[mode]
    return matricize(DenseTensor(X), mode) @ kr * model.weights


def test_mttkrp_explicit_small_example():
    T = SparseTensor.from_entries((2, 2, 2), [(0, 0, 0, 1.0), (1, 0, 1, 2.0), (1, 1, 1, -1.0)])
    m = KruskalModel(np.array([[1.0, 2], [0, 1]]), np.array([[1.0, 0], [2, 1]]), np.array([[1.0, 1], [3, -1]]))
    for mode in (1, 2, 3):
        np.testing.assert_allclose(mttkrp(T, m, mode), _dense_mttkrp(T.to_dense().data, m, mode), atol=1e-12)


def test_mttkrp_empty_tensor(rng):
    m = random_model(rng, (3, 2, 4), 2)
    for mode in (1, 2, 3):
        out = mttkrp(SparseTensor.empty((3, 2, 4)), m, mode)
        assert out.shape == (m.dims[mode - 1], 2) and not out.any()


def test_mttkrp_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        mttkrp(SparseTensor.empty((3, 2, 4)), random_model(rng, (3, 2, 5), 2), 1)


@given(dims_st, st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_mttkrp_matches_dense_oracle(dims, R, seed):
    rng = np.random.default_rng(seed)
    T, X = random_sparse(rng, dims)
    m = random_model(rng, dims, R, weights=True)
    for mode in (1, 2, 3):
        np.testing.assert_allclose(mttkrp(T, m, mode), _dense_mttkrp(X, m, mode), rtol=1e-10, atol=1e-10)


@pytest.mark.slow
def test_mttkrp_runtime_scales_linearly(rng):
    dims = (200, 100, 100)
    m = random_model(rng, dims, 5)
    times = []
    for nnz in (10**4, 10**5, 10**6):
        lin = rng.choice(np.prod(dims), size=nnz, replace=False)
        subs = np.column_stack(np.unravel_index(lin, dims))
        T = SparseTensor(dims, subs, rng.normal(size=nnz))
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            mttkrp(T, m, 1)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    # ten times the work should cost at most twenty times the time
    assert times[2] / times[1] < 20 and times[1] / times[0] < 20


# ---------------------------------------------------------------- reconstruct_masked

def test_reconstruct_masked_all_ones():
    m = KruskalModel(np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)))
    out = reconstruct_masked(m, MaskTensor.full((2, 2, 2)))
    assert out.nnz == 8 and np.all(out.vals == 1.0)


def test_reconstruct_masked_empty_mask(rng):
    out = reconstruct_masked(random_model(rng, (3, 2, 2), 2), MaskTensor((3, 2, 2)))
    assert out.nnz == 0


@given(dims_st, st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_reconstruct_masked_brute_force(dims, R, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, dims, R, weights=True)
    W = random_slice_mask(rng, dims)
    got = reconstruct_masked(m, W).to_dense().data
    np.testing.assert_allclose(got, W.to_dense() * m.full(), atol=1e-12)
