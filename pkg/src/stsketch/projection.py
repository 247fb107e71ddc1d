"""Random projection of ARIMA coefficients.

A handful of ARIMA models are trained on randomly drawn fibers; every fiber is
then put in the bucket of the model with the lowest one-step-ahead RMSE on its
training window, and the bucket sizes weight the average AR coefficients that
feed the smoothness regularizer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .arima import ArimaModel, FiberSeries, InsufficientDataError, filter_residuals, fit_arima, select_order

ZERO_BUCKET = -1
# aggregate AR coefficients reported for the NYC daily taxi tensor (lag order 3)
NYC_COEFFICIENTS = (0.55, -0.19, 0.04)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class BucketAssignment:
    locations: tuple[tuple[int, int], ...]
    buckets: np.ndarray  # bucket index per fiber, ZERO_BUCKET for all-zero fibers
    n_models: int

    @property
    def weights(self) -> np.ndarray:
        """Fibers per model bucket (the zero bucket is not counted)."""
        b = self.buckets[self.buckets != ZERO_BUCKET]
        return np.bincount(b, minlength=self.n_models)

    def as_dict(self) -> dict:
        return dict(zip(self.locations, self.buckets.tolist()))


@dataclass(frozen=True)
class AggregatedCoefficients:
    p: int
    alpha_bar: tuple[float, ...]

    def __post_init__(self):
        if len(self.alpha_bar) != self.p:
            raise ValueError("alpha_bar length must equal p")

    @classmethod
    def default(cls):
        return cls(len(NYC_COEFFICIENTS), NYC_COEFFICIENTS)


def default_model_count(n_fibers: int) -> int:
    return max(1, math.ceil(0.01 * n_fibers))


def fibers_from_tensor(X: np.ndarray) -> list[FiberSeries]:
    """Time fibers ``X[:, j, k]`` in row-major (j, k) order."""
    I, J, K = X.shape
    return [FiberSeries((j, k), np.arange(I), X[:, j, k]) for j in range(J) for k in range(K)]


def _is_zero(f: FiberSeries) -> bool:
    return not np.any(f.values)


def train_random_models(fibers, L: int, seed: int, p: int = 3, d: int = 0, q: int = 0,
                        select: bool = False) -> list[ArimaModel]:
    """Fit ``L`` models on distinct, uniformly drawn fibers.

    Fibers that are all zero or too short to fit are skipped and another is drawn.
    With ``select=True`` each model's order comes from an AIC grid search
    instead of the fixed ``(p, d, q)``.
    """
    M = len(fibers)
    if not 1 <= L <= M:
        raise ConfigurationError(f"need 1 <= L <= {M}, got L={L}")
    rng = np.random.default_rng(seed)
    models = []
    for idx in rng.permutation(M):
        f = fibers[idx]
        if _is_zero(f):
            continue
        try:
            model = select_order(f) if select else fit_arima(f, p, d, q)
        except InsufficientDataError:
            continue
        model.source = tuple(f.location)
        models.append(model)
        if len(models) == L:
            return models
    raise ConfigurationError(f"only {len(models)} fibers could be fit, {L} models requested")


def fiber_rmse(fibers, model: ArimaModel, start: int | None = None) -> np.ndarray:
    """One-step-ahead RMSE of ``model`` on each fiber, scored from index ``start``."""
    start = model.window if start is None else start
    out = np.empty(len(fibers))
    lengths = {len(f) for f in fibers}
    if len(lengths) == 1:
        groups = [(list(range(len(fibers))), np.vstack([f.values for f in fibers]))]
    else:
        groups = [([i], f.values[None, :]) for i, f in enumerate(fibers)]
    for idx, X in groups:
        pred, _ = filter_residuals(model.alpha, model.beta, model.c, model.d, X)
        off = start - model.window
        err = X[:, start:] - pred[:, off:]
        out[idx] = np.sqrt(np.mean(err ** 2, axis=1)) if err.shape[1] else np.inf
    return out


def assign_buckets(fibers, models) -> BucketAssignment:
    """Argmin-RMSE bucketing; ties go to the lowest model index."""
    if not models:
        raise ConfigurationError("at least one model is required")
    start = max(m.window for m in models)
    scores = np.vstack([fiber_rmse(fibers, m, start) for m in models])
    buckets = np.argmin(scores, axis=0).astype(np.int64)
    zero = np.array([_is_zero(f) for f in fibers], dtype=bool)
    buckets[zero] = ZERO_BUCKET
    return BucketAssignment(tuple(tuple(f.location) for f in fibers), buckets, len(models))


def aggregate_coefficients(assignment: BucketAssignment, models, p: int | None = None) -> AggregatedCoefficients:
    """Bucket-size weighted mean of the (zero-padded) AR coefficients."""
    if p is None:
        p = max(m.p for m in models)
    w = assignment.weights.astype(float)
    if w.sum() == 0:
        raise ConfigurationError("no fibers assigned to any model bucket")
    alpha = np.vstack([m.padded_alpha(p) for m in models]) if p else np.zeros((len(models), 0))
    alpha_bar = (w @ alpha) / w.sum()
    return AggregatedCoefficients(p, tuple(float(a) for a in alpha_bar))


def write_models(path, models) -> None:
    with open(path, "w") as fh:
        for i, m in enumerate(models):
            fh.write(json.dumps({"id": i, **m.to_record()}, sort_keys=True) + "\n")


def read_models(path) -> list[ArimaModel]:
    with open(path) as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    recs.sort(key=lambda r: r["id"])
    return [ArimaModel.from_record(r) for r in recs]


def write_buckets(path, assignment: BucketAssignment) -> None:
    with open(path, "w") as fh:
        fh.write(f"# models {assignment.n_models}\n")
        for (j, k), b in zip(assignment.locations, assignment.buckets.tolist()):
            fh.write(f"{j} {k} {b}\n")


def read_buckets(path) -> BucketAssignment:
    locs, buckets, n_models = [], [], None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# models"):
                n_models = int(line.split()[-1])
            elif line and not line.startswith("#"):
                j, k, b = (int(x) for x in line.split())
                locs.append((j, k))
                buckets.append(b)
    buckets = np.array(buckets, dtype=np.int64)
    if n_models is None:
        n_models = int(buckets.max()) + 1 if len(buckets) else 0
    return BucketAssignment(tuple(locs), buckets, n_models)


def coefficients_record(coef: AggregatedCoefficients) -> dict:
    return {"p": coef.p, "alpha_bar": list(coef.alpha_bar)}


def coefficients_from_record(rec: dict) -> AggregatedCoefficients:
    return AggregatedCoefficients(int(rec["p"]), tuple(float(a) for a in rec["alpha_bar"]))
