"""Per-fiber ARIMA(p, d, q) models.

The model on the d-times differenced series ``w`` is

    w_t = c + sum_j alpha_j w_{t-j} + eps_t + sum_j beta_j eps_{t-j}

and is fit by two-stage Hannan-Rissanen least squares (a long AR fit supplies
residual estimates, then ``w_t`` is regressed on its own lags and lagged
residuals).  Forecasts integrate the differenced prediction back to the
original scale.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError

log = logging.getLogger(__name__)

RIDGE_COND = 1e12
RIDGE_SCALE = 1e-8
MIN_EXTRA_SAMPLES = 10


class InsufficientDataError(ValueError):
    pass


class StateError(RuntimeError):
    pass


@dataclass
class FiberSeries:
    """Time series of one spatial cell ``(j, k)``; gaps in ``times`` are allowed."""

    location: tuple[int, int]
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64).reshape(-1)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.times) != len(self.values):
            raise ValueError("times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series values must be finite")

    @classmethod
    def from_values(cls, values, location=(0, 0), start=0):
        values = np.asarray(values, dtype=float)
        return cls(location, np.arange(start, start + len(values)), values)

    def __len__(self):
        return len(self.values)


def _integration_weights(d: int) -> np.ndarray:
    """``x_t = w_t + sum_k weights[k-1] * x_{t-k}`` for k = 1..d."""
    return np.array([-((-1) ** k) * math.comb(d, k) for k in range(1, d + 1)], dtype=float)


def predict_next(alpha, beta, c, d, history, residuals):
    """Vectorised one-step forecast.

    ``history``: (..., p + d) last original-scale values, oldest first.
    ``residuals``: (..., q) last innovations, oldest first.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    history = np.asarray(history, dtype=float)
    p, q = len(alpha), len(beta)
    w = np.diff(history, n=d, axis=-1) if d else history
    pred = np.full(history.shape[:-1], float(c))
    if p:
        pred = pred + w[..., ::-1][..., :p] @ alpha
    if q:
        pred = pred + np.asarray(residuals, dtype=float)[..., ::-1][..., :q] @ beta
    if d:
        pred = pred + history[..., ::-1][..., :d] @ _integration_weights(d)
    return pred


@dataclass
class ArimaModel:
    p: int
    d: int
    q: int
    alpha: np.ndarray
    beta: np.ndarray
    c: float = 0.0
    sigma2: float = 0.0
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    source: tuple[int, int] | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if min(self.p, self.d, self.q) < 0:
            raise ValueError("ARIMA orders must be non-negative")
        if len(self.alpha) != self.p or len(self.beta) != self.q:
            raise ValueError("coefficient lengths must match (p, q)")
        self.history = np.asarray(self.history, dtype=float).reshape(-1)[-self.window:] if self.window else np.zeros(0)
        res = np.asarray(self.residuals, dtype=float).reshape(-1)
        self.residuals = res[-self.q:] if self.q else np.zeros(0)

    @property
    def window(self) -> int:
        """Number of past original-scale values a forecast needs."""
        return self.p + self.d

    @property
    def ready(self) -> bool:
        return len(self.history) >= self.window

    def forecast(self) -> float:
        if not self.ready:
            raise StateError(f"need {self.window} past values, have {len(self.history)}")
        res = np.zeros(self.q)
        res[self.q - len(self.residuals):] = self.residuals
        return float(predict_next(self.alpha, self.beta, self.c, self.d, self.history, res))

    def update(self, observed: float) -> float:
        """Roll the state forward by one observation; returns the innovation."""
        observed = float(observed)
        eps = observed - self.forecast() if self.ready else 0.0
        if self.window:
            self.history = np.append(self.history, observed)[-self.window:]
        if self.q:
            self.residuals = np.append(self.residuals, eps)[-self.q:]
        return eps

    def prime(self, values) -> ArimaModel:
        """Fresh copy whose state is obtained by filtering ``values`` from scratch."""
        m = self.copy(with_state=False)
        for v in np.asarray(values, dtype=float):
            m.update(v)
        return m

    def copy(self, with_state: bool = True) -> ArimaModel:
        return ArimaModel(
            self.p, self.d, self.q, self.alpha.copy(), self.beta.copy(), self.c, self.sigma2,
            self.history.copy() if with_state else np.zeros(0),
            self.residuals.copy() if with_state else np.zeros(0),
            self.source,
        )

    def padded_alpha(self, p: int) -> np.ndarray:
        if p < self.p:
            raise ValueError(f"cannot pad order {self.p} down to {p}")
        return np.concatenate([self.alpha, np.zeros(p - self.p)])

    def to_record(self) -> dict:
        return {
            "p": self.p, "d": self.d, "q": self.q,
            "alpha": self.alpha.tolist(), "beta": self.beta.tolist(),
            "c": self.c, "sigma2": self.sigma2,
            "source": list(self.source) if self.source is not None else None,
        }

    @classmethod
    def from_record(cls, rec: dict) -> ArimaModel:
        return cls(int(rec["p"]), int(rec["d"]), int(rec["q"]), rec["alpha"], rec["beta"],
                   float(rec["c"]), float(rec.get("sigma2", 0.0)),
                   source=tuple(rec["source"]) if rec.get("source") is not None else None)


def forecast_one(model: ArimaModel) -> float:
    return model.forecast()


def update_state(model: ArimaModel, observed: float) -> ArimaModel:
    model.update(observed)
    return model


def _lagged(w: np.ndarray, lags: int, start: int) -> np.ndarray:
    """Columns ``w[t-1], ..., w[t-lags]`` for t = start..len(w)-1."""
    n = len(w)
    return np.column_stack([w[start - j:n - j] for j in range(1, lags + 1)]) if lags else np.zeros((n - start, 0))


def _solve_ls(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    G = X.T @ X
    b = X.T @ y
    if np.linalg.cond(G) > RIDGE_COND:
        scale = np.trace(G) / len(G) if np.trace(G) > 0 else 1.0
        G = G + RIDGE_SCALE * scale * np.eye(len(G))
    return np.linalg.solve(G, b)


def filter_residuals(alpha, beta, c, d, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-step predictions and innovations over each row of ``x`` (shape (n, T)).

    Predictions start at t = p + d (the first point with full history); earlier
    innovations are taken as zero.  Returns ``(pred, eps)`` of shape (n, T - p - d).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p, q = len(alpha), len(beta)
    win = p + d
    n, T = x.shape
    preds = np.zeros((n, max(T - win, 0)))
    eps = np.zeros((n, max(T - win, 0)))
    res = np.zeros((n, q))
    for t in range(win, T):
        pr = predict_next(alpha, beta, c, d, x[:, t - win:t], res)
        e = x[:, t] - pr
        preds[:, t - win] = pr
        eps[:, t - win] = e
        if q:
            res = np.concatenate([res[:, 1:], e[:, None]], axis=1)
    return preds, eps


def fit_arima(series, p: int = 3, d: int = 0, q: int = 0, long_ar: int | None = None) -> ArimaModel:
    """Hannan-Rissanen fit; the returned model's state is primed on ``series``."""
    values = series.values if isinstance(series, FiberSeries) else np.asarray(series, dtype=float)
    n = len(values)
    if n < p + d + q + MIN_EXTRA_SAMPLES:
        raise InsufficientDataError(f"ARIMA({p},{d},{q}) needs {p + d + q + MIN_EXTRA_SAMPLES} points, got {n}")
    w = np.diff(values, n=d) if d else values.copy()
    m = len(w)

    e = np.zeros(m)
    start = p
    if q:
        long_order = long_ar if long_ar is not None else max(min(20, m // 4), p + q, 1)
        if m - long_order < long_order + 2:
            raise InsufficientDataError("series too short for the long-AR stage")
        X1 = np.column_stack([np.ones(m - long_order), _lagged(w, long_order, long_order)])
        coef1 = _solve_ls(X1, w[long_order:])
        e[long_order:] = w[long_order:] - X1 @ coef1
        start = max(p, long_order + q)

    X = np.column_stack([np.ones(m - start), _lagged(w, p, start), _lagged(e, q, start)])
    coef = _solve_ls(X, w[start:])
    resid = w[start:] - X @ coef
    model = ArimaModel(p, d, q, coef[1:1 + p], coef[1 + p:], float(coef[0]), float(np.mean(resid ** 2)))
    return model.prime(values)


def aic(model: ArimaModel, n: int) -> float:
    return n * math.log(max(model.sigma2, 1e-300)) + 2 * (model.p + model.q + 1)


def select_order(series, p_values=range(1, 6), d_values=(0, 1), q_values=(0, 1)) -> ArimaModel:
    """Grid search by AIC; orders that cannot be fit are skipped."""
    values = series.values if isinstance(series, FiberSeries) else np.asarray(series, dtype=float)
    best, best_score = None, math.inf
    for p, d, q in itertools.product(p_values, d_values, q_values):
        try:
            model = fit_arima(values, p, d, q)
        except InsufficientDataError:
            continue
        score = aic(model, len(values) - d)
        if score < best_score:
            best, best_score = model, score
    if best is None:
        raise InsufficientDataError("no order in the grid could be fit")
    return best


def slice_feedback_error(predictions, actuals, delta: float = 1.0) -> float:
    """Sum over cells of ``|pred - actual| / max(actual, delta)``."""
    predictions = np.asarray(predictions, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    if predictions.shape != actuals.shape:
        raise DimensionError(f"shape mismatch {predictions.shape} vs {actuals.shape}")
    if delta <= 0:
        raise ValueError("delta must be positive")
    return float(np.sum(np.abs(predictions - actuals) / np.maximum(actuals, delta)))
