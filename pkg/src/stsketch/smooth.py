"""Weighted CP completion with an autoregressive smoothness penalty on the time factor.

Minimises

    f(A, B, C) = 1/2 ||Y - W * [[A, B, C]]||_F^2 + rho/2 ||L A||_F^2

where ``L`` is a banded I x I matrix built from aggregated AR coefficients.
Row ``i`` (0-based) of ``L`` holds ``1`` at column ``i - p`` and ``-alpha_j`` at
column ``i - p + j`` (j = 1..p), keeping only columns that exist; the first
``p`` rows are therefore truncated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lbfgs import minimize_lbfgs
from .projection import AggregatedCoefficients, ConfigurationError
from .tensor import DenseTensor, DimensionError, KruskalModel, MaskTensor, SparseTensor, mttkrp_coo

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegularizerMatrix:
    size: int
    alpha: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if len(self.alpha) >= self.size:
            raise ConfigurationError(f"lag order {len(self.alpha)} must be smaller than I={self.size}")

    @property
    def p(self) -> int:
        return len(self.alpha)

    @property
    def band(self) -> np.ndarray:
        """Coefficient at column offset ``i - p + j`` for j = 0..p."""
        return np.concatenate([[1.0], -np.asarray(self.alpha)])

    def matvec(self, A: np.ndarray) -> np.ndarray:
        """``L @ A`` in O(I p R)."""
        A = np.asarray(A, dtype=float)
        I, p = self.size, self.p
        out = np.zeros_like(A)
        for j, c in enumerate(self.band):
            if c:
                out[p - j:] += c * A[:I - p + j]
        return out

    def rmatvec(self, Z: np.ndarray) -> np.ndarray:
        """``L.T @ Z`` in O(I p R)."""
        Z = np.asarray(Z, dtype=float)
        I, p = self.size, self.p
        out = np.zeros_like(Z)
        for j, c in enumerate(self.band):
            if c:
                out[:I - p + j] += c * Z[p - j:]
        return out

    def to_dense(self) -> np.ndarray:
        return self.matvec(np.eye(self.size))

    def penalty(self, A: np.ndarray) -> float:
        """``||L A||_F^2``."""
        return float(np.sum(self.matvec(A) ** 2))


def build_regularizer(coefficients, I: int) -> RegularizerMatrix:
    alpha = coefficients.alpha_bar if isinstance(coefficients, AggregatedCoefficients) else tuple(coefficients)
    return RegularizerMatrix(int(I), alpha)


@dataclass(frozen=True)
class FactorizationConfig:
    rank: int = 5
    rho: float = 600.0
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    seed: int = 0
    lbfgs_memory: int = 5
    n_starts: int = 1  # random starts seed, seed+1, ...; the lowest final objective wins

    def __post_init__(self):
        if self.rank < 1 or self.n_starts < 1:
            raise ConfigurationError("rank and n_starts must be >= 1")
        if self.rho < 0:
            raise ConfigurationError("rho must be >= 0")
        if self.gradient_tolerance <= 0 or self.max_iterations < 1 or self.lbfgs_memory < 1:
            raise ConfigurationError("tolerances and iteration limits must be positive")


@dataclass(frozen=True)
class FactorizationResult:
    model: KruskalModel
    objective_trace: tuple[float, ...]
    converged: bool
    iterations: int
    message: str = ""


class _Problem:
    """Observed positions and data, prepared once for repeated f/grad evaluations."""

    def __init__(self, Y: SparseTensor, W: MaskTensor, L: RegularizerMatrix | None, rho: float):
        if tuple(Y.dims) != tuple(W.dims):
            raise DimensionError(f"sketch dims {Y.dims} != mask dims {W.dims}")
        if L is not None and L.size != W.dims[0]:
            raise DimensionError(f"regularizer size {L.size} != time dimension {W.dims[0]}")
        self.dims = tuple(W.dims)
        self.subs = W.observed_subs()
        lin_obs = np.ravel_multi_index(tuple(self.subs.T), self.dims) if len(self.subs) else np.zeros(0, np.int64)
        self.y = np.zeros(len(self.subs))
        if Y.nnz and len(self.subs):
            lin_y = np.ravel_multi_index(tuple(Y.subs.T), self.dims)
            pos = np.searchsorted(lin_obs, lin_y)
            pos_c = np.minimum(pos, len(lin_obs) - 1)
            hit = lin_obs[pos_c] == lin_y
            self.y[pos_c[hit]] = Y.vals[hit]
        self.L = L
        self.rho = float(rho) if L is not None else 0.0

    def residual(self, model: KruskalModel) -> np.ndarray:
        return self.y - model.values_at(self.subs)

    def objective(self, model: KruskalModel) -> float:
        r = self.residual(model)
        f = 0.5 * float(r @ r)
        if self.rho:
            f += 0.5 * self.rho * self.L.penalty(model.A)
        return f

    def gradients(self, model: KruskalModel):
        r = self.residual(model)
        grads = [-mttkrp_coo(self.subs, r, model.factors, n, self.dims[n - 1]) * model.weights for n in (1, 2, 3)]
        if self.rho:
            grads[0] = grads[0] + self.rho * self.L.rmatvec(self.L.matvec(model.A))
        return tuple(grads)

    def fun_grad(self, x: np.ndarray, R: int):
        A, B, C = unpack(x, self.dims, R)
        i, j, k = self.subs.T
        Ai, Bj, Ck = A[i], B[j], C[k]
        r = self.y - np.einsum("nr,nr,nr->n", Ai, Bj, Ck)
        f = 0.5 * float(r @ r)
        gA = -_scatter(i, r[:, None] * Bj * Ck, self.dims[0])
        gB = -_scatter(j, r[:, None] * Ai * Ck, self.dims[1])
        gC = -_scatter(k, r[:, None] * Ai * Bj, self.dims[2])
        if self.rho:
            LA = self.L.matvec(A)
            f += 0.5 * self.rho * float(np.sum(LA ** 2))
            gA += self.rho * self.L.rmatvec(LA)
        return f, np.concatenate([gA.ravel(), gB.ravel(), gC.ravel()])


def _scatter(idx: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, rows.shape[1]))
    for r in range(rows.shape[1]):
        out[:, r] = np.bincount(idx, weights=rows[:, r], minlength=n)
    return out


def pack(A, B, C) -> np.ndarray:
    return np.concatenate([np.ravel(A), np.ravel(B), np.ravel(C)])


def unpack(x: np.ndarray, dims, R: int):
    I, J, K = dims
    A = x[:I * R].reshape(I, R)
    B = x[I * R:(I + J) * R].reshape(J, R)
    C = x[(I + J) * R:].reshape(K, R)
    return A, B, C


def _check_model(model: KruskalModel, dims) -> None:
    if model.dims != tuple(dims):
        raise DimensionError(f"model dims {model.dims} != tensor dims {tuple(dims)}")


def objective(Y: SparseTensor, W: MaskTensor, model: KruskalModel, L: RegularizerMatrix | None, rho: float) -> float:
    prob = _Problem(Y, W, L, rho)
    _check_model(model, prob.dims)
    return prob.objective(model)


def gradients(Y: SparseTensor, W: MaskTensor, model: KruskalModel, L: RegularizerMatrix | None, rho: float):
    """Gradients of :func:`objective` with respect to A, B and C."""
    prob = _Problem(Y, W, L, rho)
    _check_model(model, prob.dims)
    return prob.gradients(model)


def random_init(dims, rank: int, seed: int) -> KruskalModel:
    rng = np.random.default_rng(seed)
    return KruskalModel(*(rng.random((n, rank)) for n in dims))


def factorize(Y: SparseTensor, W: MaskTensor, config: FactorizationConfig,
              L: RegularizerMatrix | None = None, init: KruskalModel | None = None) -> FactorizationResult:
    """Fit A, B, C by L-BFGS from seeded uniform(0, 1) starts (or from ``init``)."""
    prob = _Problem(Y, W, L, config.rho)
    if len(prob.subs) == 0:
        raise ConfigurationError("mask has no observed entries")
    R = config.rank
    if init is not None:
        starts = [init.absorb_weights()]
    else:
        starts = [random_init(prob.dims, R, config.seed + s) for s in range(config.n_starts)]
    best = None
    for start in starts:
        _check_model(start, prob.dims)
        res = minimize_lbfgs(
            lambda x: prob.fun_grad(x, R),
            pack(*start.factors),
            memory=config.lbfgs_memory,
            gtol=config.gradient_tolerance,
            max_iter=config.max_iterations,
        )
        if not res.converged:
            log.info("factorize stopped without converging: %s", res.message)
        if best is None or res.f < best.f:
            best = res
    model = KruskalModel(*(m.copy() for m in unpack(best.x, prob.dims, R)))
    return FactorizationResult(model, tuple(best.trace), best.converged, best.iterations, best.message)


def complete_tensor(Y: SparseTensor, W: MaskTensor, model: KruskalModel) -> DenseTensor:
    """Observed entries copied from ``Y``; missing ones filled from the model."""
    if tuple(Y.dims) != tuple(W.dims):
        raise DimensionError(f"sketch dims {Y.dims} != mask dims {W.dims}")
    _check_model(model, W.dims)
    w = W.to_dense()
    return DenseTensor(w * Y.to_dense().data + (1.0 - w) * model.full())
