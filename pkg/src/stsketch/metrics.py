"""Factor match score, tensor completion score and series RMSE."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .tensor import DenseTensor, DimensionError, KruskalModel, MaskTensor


class UndefinedScoreError(ValueError):
    pass


@dataclass(frozen=True)
class MatchReport:
    fms: float
    column_matching: tuple[int, ...]  # column_matching[r] = estimate column matched to reference column r
    congruences: tuple[float, ...]


def _pad(model: KruskalModel, R: int) -> list[np.ndarray]:
    mats = [model.A * model.weights, model.B, model.C]
    return [np.hstack([m, np.zeros((m.shape[0], R - m.shape[1]))]) for m in mats]


def _component_scores(ref: list[np.ndarray], est: list[np.ndarray]) -> np.ndarray:
    """R x R matrix of per-component scores (norm penalty times cosine product)."""
    R = ref[0].shape[1]
    cos = np.ones((R, R))
    xi_ref = np.ones(R)
    xi_est = np.ones(R)
    for X, Xb in zip(ref, est):
        n1 = np.linalg.norm(X, axis=0)
        n2 = np.linalg.norm(Xb, axis=0)
        xi_ref *= n1
        xi_est *= n2
        with np.errstate(divide="ignore", invalid="ignore"):
            cos *= (X.T @ Xb) / np.outer(n1, n2)
    with np.errstate(divide="ignore", invalid="ignore"):
        penalty = 1.0 - np.abs(xi_ref[:, None] - xi_est[None, :]) / np.maximum(xi_ref[:, None], xi_est[None, :])
    scores = penalty * cos
    bad = ~np.isfinite(scores)
    if bad.any():
        warnings.warn("zero-norm factor column; affected components score 0", RuntimeWarning, stacklevel=3)
        scores[bad] = 0.0
    return np.clip(scores, 0.0, 1.0)


def fms(reference: KruskalModel, estimate: KruskalModel, optimal: bool = False) -> MatchReport:
    """Factor match score with columns aligned by greedy (or optimal) matching.

    Weights are folded into the first factor; ranks are padded with zero columns.
    Components whose cosine product is negative score 0.
    """
    if reference.dims != estimate.dims:
        raise DimensionError(f"model dims differ: {reference.dims} vs {estimate.dims}")
    R = max(reference.rank, estimate.rank)
    S = _component_scores(_pad(reference, R), _pad(estimate, R))
    if optimal:
        rows, cols = linear_sum_assignment(-S)
        match = np.empty(R, dtype=int)
        match[rows] = cols
    else:
        match = np.full(R, -1)
        work = S.copy()
        for _ in range(R):
            r, c = np.unravel_index(np.argmax(work), work.shape)
            match[r] = c
            work[r, :] = -np.inf
            work[:, c] = -np.inf
    per = np.array([S[r, match[r]] for r in range(R)])
    return MatchReport(float(np.mean(per)), tuple(int(c) for c in match), tuple(float(s) for s in per))


def _arr(X):
    return X.data if isinstance(X, DenseTensor) else np.asarray(X, dtype=float)


def tcs(X, Xbar, W: MaskTensor) -> float:
    """Relative Frobenius error over the unobserved entries."""
    X, Xbar = _arr(X), _arr(Xbar)
    if X.shape != Xbar.shape or X.shape != tuple(W.dims):
        raise DimensionError(f"shapes differ: {X.shape}, {Xbar.shape}, {W.dims}")
    miss = 1.0 - W.to_dense()
    denom = np.linalg.norm(miss * X)
    if denom == 0:
        raise UndefinedScoreError("no unobserved signal: ||(1 - W) * X|| = 0")
    return float(np.linalg.norm(miss * (X - Xbar)) / denom)


def stream_rmse(predictions, actuals) -> float:
    """RMSE over the timestamps the two series share."""
    common, ip, ia = np.intersect1d(predictions.times, actuals.times, return_indices=True)
    if len(common) == 0:
        raise UndefinedScoreError("series share no timestamps")
    diff = predictions.values[ip] - actuals.values[ia]
    return float(np.sqrt(np.mean(diff ** 2)))
