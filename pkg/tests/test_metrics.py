import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_model, random_slice_mask
from stsketch.arima import FiberSeries
from stsketch.metrics import UndefinedScoreError, fms, stream_rmse, tcs
from stsketch.tensor import DimensionError, KruskalModel, MaskTensor


# ---------------------------------------------------------------- fms

def test_fms_identity(rng):
    m = random_model(rng, (5, 4, 3), 3)
    rep = fms(m, m)
    assert rep.fms == pytest.approx(1.0)
    assert rep.column_matching == (0, 1, 2)


def test_fms_hand_example():
    ones = np.ones((2, 1))
    ref = KruskalModel(ones, ones, ones)
    est = KruskalModel(np.array([[1.0], [0.0]]), ones, ones)
    # xi_ref = 2 sqrt(2), xi_est = 2: norm penalty 1/sqrt(2); cosine of the first factor 1/sqrt(2)
    assert fms(ref, est).fms == pytest.approx(0.5)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10))
def test_fms_permutation_and_scale_invariance(seed, s):
    rng = np.random.default_rng(seed)
    m = random_model(rng, (5, 4, 3), 3)
    perm = rng.permutation(3)
    scale_a = np.ones(3)
    scale_a[0] = s
    est = KruskalModel(m.A[:, perm] * scale_a, m.B[:, perm] / scale_a, m.C[:, perm])
    rep = fms(m, est)
    assert rep.fms == pytest.approx(1.0, abs=1e-10)
    assert rep.column_matching == tuple(int(i) for i in np.argsort(perm))


def test_fms_weights_fold_into_first_factor(rng):
    m = random_model(rng, (4, 3, 3), 2, weights=True)
    assert fms(m, m.absorb_weights()).fms == pytest.approx(1.0)


@pytest.mark.filterwarnings("ignore:zero-norm factor column")
@given(st.integers(0, 2**31 - 1))
def test_fms_is_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = random_model(rng, (4, 3, 3), 2), random_model(rng, (4, 3, 3), 3)
    for optimal in (False, True):
        rep = fms(a, b, optimal=optimal)
        assert 0 <= rep.fms <= 1
        assert sorted(rep.column_matching) == [0, 1, 2]


def test_optimal_matching_never_worse_than_greedy(rng):
    for _ in range(20):
        a, b = random_model(rng, (4, 3, 3), 3), random_model(rng, (4, 3, 3), 3)
        assert fms(a, b, optimal=True).fms >= fms(a, b).fms - 1e-12


def test_rank_padding_scores_missing_components_zero(rng):
    m = random_model(rng, (4, 3, 3), 2)
    one = KruskalModel(m.A[:, :1], m.B[:, :1], m.C[:, :1])
    with pytest.warns(RuntimeWarning):
        rep = fms(m, one)
    assert rep.fms == pytest.approx(0.5)


def test_fms_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        fms(random_model(rng, (4, 3, 3), 2), random_model(rng, (4, 3, 2), 2))


# ---------------------------------------------------------------- tcs

def test_tcs_exact_completion_is_zero(rng):
    X = rng.normal(size=(5, 3, 2))
    assert tcs(X, X, MaskTensor(X.shape, frozenset({1}))) == 0.0


def test_tcs_zero_fill_is_one(rng):
    X = rng.normal(size=(5, 3, 2))
    W = MaskTensor(X.shape, frozenset({0, 2}))
    Xbar = X * W.to_dense()
    assert tcs(X, Xbar, W) == pytest.approx(1.0)


def test_tcs_brute_force(rng):
    X, Xbar = rng.normal(size=(6, 3, 2)), rng.normal(size=(6, 3, 2))
    W = random_slice_mask(rng, X.shape)
    num = den = 0.0
    for idx in np.ndindex(X.shape):
        if not W(*idx):
            num += (X[idx] - Xbar[idx]) ** 2
            den += X[idx] ** 2
    assert tcs(X, Xbar, W) == pytest.approx(math.sqrt(num / den), rel=1e-12)


def test_tcs_ignores_observed_positions(rng):
    X, Xbar = rng.normal(size=(6, 3, 2)), rng.normal(size=(6, 3, 2))
    W = MaskTensor(X.shape, frozenset({0, 3}))
    other = Xbar.copy()
    other[[0, 3]] = 1e6
    assert tcs(X, other, W) == tcs(X, Xbar, W)


def test_tcs_undefined_without_missing_signal():
    X = np.ones((2, 2, 2))
    with pytest.raises(UndefinedScoreError):
        tcs(X, X, MaskTensor.full(X.shape))
    with pytest.raises(DimensionError):
        tcs(X, np.ones((2, 2, 3)), MaskTensor((2, 2, 2)))


# ---------------------------------------------------------------- stream_rmse

def test_stream_rmse_examples(rng):
    v = rng.normal(size=10)
    a = FiberSeries.from_values(v)
    assert stream_rmse(a, a) == 0.0
    assert stream_rmse(a, FiberSeries.from_values(v + 1)) == pytest.approx(1.0)
    w = rng.normal(size=10)
    assert stream_rmse(a, FiberSeries.from_values(w)) == pytest.approx(np.sqrt(np.mean((v - w) ** 2)))


def test_stream_rmse_aligns_on_times():
    a = FiberSeries((0, 0), np.array([0, 1, 2]), np.array([1.0, 2.0, 3.0]))
    b = FiberSeries((0, 0), np.array([2, 3]), np.array([5.0, 0.0]))
    assert stream_rmse(a, b) == pytest.approx(2.0)
    c = FiberSeries((0, 0), np.array([7]), np.array([0.0]))
    with pytest.raises(UndefinedScoreError):
        stream_rmse(a, c)
