import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import dense_slices, random_model, random_slice_mask
from stsketch.metrics import fms
from stsketch.projection import AggregatedCoefficients, ConfigurationError
from stsketch.smooth import (
    FactorizationConfig,
    build_regularizer,
    complete_tensor,
    factorize,
    gradients,
    objective,
)
from stsketch.tensor import DimensionError, KruskalModel, MaskTensor, SparseTensor


def _instance(rng, dims=(8, 6, 5), R=3):
    truth = random_model(rng, dims, R)
    W = random_slice_mask(rng, dims)
    X = truth.full() + 0.1 * rng.normal(size=dims)
    return dense_slices(X, W), W


def _fd_gradients(Y, W, model, L, rho, h=1e-5):
    out = []
    for n, M in enumerate(model.factors):
        G = np.zeros_like(M)
        for idx in np.ndindex(M.shape):
            facs = [F.copy() for F in model.factors]
            facs[n][idx] += h
            fp = objective(Y, W, KruskalModel(*facs), L, rho)
            facs[n][idx] -= 2 * h
            fm = objective(Y, W, KruskalModel(*facs), L, rho)
            G[idx] = (fp - fm) / (2 * h)
        out.append(G)
    return out


# ---------------------------------------------------------------- regularizer

def test_regularizer_small_example():
    L = build_regularizer(AggregatedCoefficients(1, (0.5,)), 3).to_dense()
    np.testing.assert_array_equal(L, [[-0.5, 0, 0], [1, -0.5, 0], [0, 1, -0.5]])


def test_regularizer_default_rows():
    L = build_regularizer(AggregatedCoefficients.default(), 7).to_dense()
    np.testing.assert_allclose(L[5, 2:6], [1, -0.55, 0.19, -0.04])
    for i in range(3, 7):
        assert np.count_nonzero(L[i]) == 4
        assert L[i].sum() == pytest.approx(1 - (0.55 - 0.19 + 0.04))
    # truncated leading rows
    np.testing.assert_allclose(L[0], [-0.04, 0, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(L[1], [0.19, -0.04, 0, 0, 0, 0, 0])


def test_zero_coefficients_give_shifted_ridge(rng):
    L = build_regularizer((0.0, 0.0), 6)
    A = rng.normal(size=(6, 2))
    assert L.penalty(A) == pytest.approx(np.sum(A[:4] ** 2))


def test_order_must_be_below_size():
    with pytest.raises(ConfigurationError):
        build_regularizer((0.1, 0.2, 0.3), 3)


@given(st.integers(2, 30), st.lists(st.floats(-2, 2), min_size=1, max_size=4), st.integers(0, 2**31 - 1))
def test_banded_multiply_matches_dense(I, alpha, seed):
    if len(alpha) >= I:
        return
    rng = np.random.default_rng(seed)
    L = build_regularizer(alpha, I)
    D = L.to_dense()
    A = rng.normal(size=(I, 3))
    np.testing.assert_allclose(L.matvec(A), D @ A, rtol=0, atol=1e-12)
    np.testing.assert_allclose(L.rmatvec(A), D.T @ A, rtol=0, atol=1e-12)
    assert L.penalty(A) == pytest.approx(np.sum((D @ A) ** 2), rel=1e-12)


# ---------------------------------------------------------------- objective

def test_perfect_fit_has_zero_objective(rng):
    m = random_model(rng, (5, 3, 4), 2)
    W = random_slice_mask(rng, (5, 3, 4))
    Y = dense_slices(m.full(), W)
    assert objective(Y, W, m, None, 0.0) == pytest.approx(0.0, abs=1e-20)
    for G in gradients(Y, W, m, None, 0.0):
        np.testing.assert_allclose(G, 0, atol=1e-12)


def test_zero_factors_give_half_norm(rng):
    Y, W = _instance(rng)
    zero = KruskalModel(*(np.zeros((n, 3)) for n in Y.dims))
    L = build_regularizer(AggregatedCoefficients.default(), Y.dims[0])
    assert objective(Y, W, zero, L, 600.0) == pytest.approx(0.5 * np.sum(Y.vals ** 2))


def test_objective_matches_dense_enumeration(rng):
    Y, W = _instance(rng)
    m = random_model(rng, Y.dims, 3)
    L = build_regularizer((0.55, -0.19, 0.04), Y.dims[0])
    w = W.to_dense()
    expected = 0.5 * np.sum((w * (Y.to_dense().data - m.full())) ** 2)
    expected += 0.5 * 600 * np.sum((L.to_dense() @ m.A) ** 2)
    assert objective(Y, W, m, L, 600.0) == pytest.approx(expected, rel=1e-10)


def test_objective_dimension_mismatch(rng):
    Y, W = _instance(rng)
    with pytest.raises(DimensionError):
        objective(Y, W, random_model(rng, (8, 6, 4), 3), None, 0.0)


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("rho", [0.0, 600.0])
def test_gradients_match_finite_differences(rng, rho):
    Y, W = _instance(rng)
    m = random_model(rng, Y.dims, 3)
    L = build_regularizer((0.55, -0.19, 0.04), Y.dims[0])
    for G, F in zip(gradients(Y, W, m, L, rho), _fd_gradients(Y, W, m, L, rho)):
        scale = np.abs(G).max()
        np.testing.assert_allclose(G, F, rtol=1e-5, atol=1e-5 * scale)


def test_zero_rho_drops_regularizer(rng):
    Y, W = _instance(rng)
    m = random_model(rng, Y.dims, 3)
    L = build_regularizer((0.55, -0.19, 0.04), Y.dims[0])
    for a, b in zip(gradients(Y, W, m, L, 0.0), gradients(Y, W, m, None, 0.0)):
        np.testing.assert_array_equal(a, b)


def test_regularizer_gradient_term(rng):
    Y, W = _instance(rng)
    m = random_model(rng, Y.dims, 3)
    L = build_regularizer((0.5, 0.2), Y.dims[0])
    D = L.to_dense()
    diff = gradients(Y, W, m, L, 7.0)[0] - gradients(Y, W, m, None, 0.0)[0]
    np.testing.assert_allclose(diff, 7.0 * D.T @ D @ m.A, atol=1e-10)


# ---------------------------------------------------------------- factorize

def test_planted_recovery_full_mask():
    rng = np.random.default_rng(3)
    truth = random_model(rng, (20, 8, 8), 2)
    W = MaskTensor.full(truth.dims)
    Y = dense_slices(truth.full(), W)
    cfg = FactorizationConfig(rank=2, rho=0.0, max_iterations=2000, gradient_tolerance=1e-10, n_starts=3)
    res = factorize(Y, W, cfg)
    assert objective(Y, W, res.model, None, 0.0) <= 1e-8 * np.sum(Y.vals ** 2)
    assert fms(truth, res.model).fms >= 0.99


def test_large_rho_pushes_time_factor_toward_null_space(rng):
    Y, W = _instance(rng, dims=(15, 4, 4), R=2)
    L = build_regularizer((0.5,), 15)
    ratio = []
    for rho in (0.0, 1e9):
        res = factorize(Y, W, FactorizationConfig(rank=2, rho=rho, max_iterations=300), L)
        A = res.model.A
        ratio.append(L.penalty(A) / np.sum(A ** 2))
    assert ratio[1] < ratio[0]


def test_factorize_is_deterministic(rng):
    Y, W = _instance(rng)
    L = build_regularizer((0.5,), Y.dims[0])
    cfg = FactorizationConfig(rank=3, rho=10.0, max_iterations=50, seed=4)
    a, b = factorize(Y, W, cfg, L), factorize(Y, W, cfg, L)
    assert a.objective_trace == b.objective_trace
    assert np.all(np.diff(a.objective_trace) <= 0)


def test_relabeling_lateral_modes_gives_same_solution():
    rng = np.random.default_rng(8)
    truth = random_model(rng, (12, 5, 4), 2)
    W = MaskTensor.full(truth.dims)
    X = truth.full()
    pj, pk = rng.permutation(5), rng.permutation(4)
    cfg = FactorizationConfig(rank=2, rho=0.0, max_iterations=3000, gradient_tolerance=1e-12, n_starts=3)
    a = factorize(dense_slices(X, W), W, cfg).model
    b = factorize(dense_slices(X[:, pj][:, :, pk], W), W, cfg).model
    inv_j, inv_k = np.argsort(pj), np.argsort(pk)
    b_back = KruskalModel(b.A, b.B[inv_j], b.C[inv_k])
    assert fms(a, b_back).fms >= 1 - 1e-6


def test_factorize_rejects_empty_mask():
    W = MaskTensor((4, 2, 2))
    with pytest.raises(ConfigurationError):
        factorize(SparseTensor.empty(W.dims), W, FactorizationConfig(rank=1))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        FactorizationConfig(rank=0)
    with pytest.raises(ConfigurationError):
        FactorizationConfig(rho=-1)


# ---------------------------------------------------------------- complete_tensor

def test_complete_full_mask_returns_data(rng):
    m = random_model(rng, (4, 3, 2), 2)
    X = rng.normal(size=(4, 3, 2))
    W = MaskTensor.full(X.shape)
    np.testing.assert_array_equal(complete_tensor(dense_slices(X, W), W, m).data, X)


def test_complete_empty_mask_returns_model(rng):
    m = random_model(rng, (4, 3, 2), 2)
    W = MaskTensor((4, 3, 2))
    np.testing.assert_allclose(complete_tensor(SparseTensor.empty(W.dims), W, m).data, m.full())


def test_complete_brute_force(rng):
    m = random_model(rng, (6, 3, 2), 2)
    X = rng.normal(size=(6, 3, 2))
    W = random_slice_mask(rng, X.shape)
    got = complete_tensor(dense_slices(X, W), W, m).data
    full = m.full()
    for i, j, k in np.ndindex(X.shape):
        assert got[i, j, k] == (X[i, j, k] if W(i, j, k) else pytest.approx(full[i, j, k]))
