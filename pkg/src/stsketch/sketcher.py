"""Streaming slice sampler driven by per-fiber forecasts and a PID controller.

At each sampling point the slice is stored, the slice feedback error of the
fiber forecasts is fed to the PID controller, and the controller output sets
the distance to the next sampling point.  Between sampling points the fiber
models run on their own forecasts.  Fixed-rate and random sampling are
provided as baselines.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .arima import ArimaModel, StateError, filter_residuals, predict_next, slice_feedback_error
from .projection import ZERO_BUCKET, BucketAssignment
from .tensor import DimensionError, MaskTensor, SparseTensor

log = logging.getLogger(__name__)


class OrderingError(ValueError):
    pass


@dataclass(frozen=True)
class PidGains:
    gamma_p: float = 0.7
    gamma_i: float = 0.2
    gamma_d: float = 0.1

    def __post_init__(self):
        g = (self.gamma_p, self.gamma_i, self.gamma_d)
        if min(g) < 0:
            raise ValueError(f"PID gains must be non-negative, got {g}")
        if abs(sum(g) - 1.0) > 1e-12:
            raise ValueError(f"PID gains must sum to 1, got {sum(g)!r}")
        if not (self.gamma_p > self.gamma_i > self.gamma_d):
            warnings.warn("PID gains usually satisfy proportional > integral > derivative", stacklevel=3)

    @classmethod
    def parse(cls, text: str) -> PidGains:
        p, i, d = (float(x) for x in text.split(","))
        return cls(p, i, d)


@dataclass
class SamplerState:
    gains: PidGains = field(default_factory=PidGains)
    theta: float = 1.0
    xi: float = 3.5
    delta: float = 1.0
    ns: int = 0
    errors: list[float] = field(default_factory=list)
    times: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.theta <= 0 or self.xi <= 0 or self.delta <= 0:
            raise ValueError("theta, xi and delta must be positive")

    @property
    def n_errors(self) -> int:
        return len(self.errors)

    def record(self, E_t: float, t: int) -> None:
        if self.times and t <= self.times[-1]:
            raise OrderingError(f"sample time {t} not after {self.times[-1]}")
        self.errors.append(float(E_t))
        self.times.append(int(t))


def pid_error(state: SamplerState, E_t: float, t: int) -> float:
    """PID output for a new slice error; ``state`` is not modified.

    Integral term: mean of every error so far including ``E_t``.  Derivative
    term: change since the previous sample divided by the sample spacing
    (zero for the first sample).
    """
    if state.times and t <= state.times[-1]:
        raise OrderingError(f"sample time {t} not after {state.times[-1]}")
    g = state.gains
    integral = (math.fsum(state.errors) + E_t) / (len(state.errors) + 1)
    deriv = (E_t - state.errors[-1]) / (t - state.times[-1]) if state.errors else 0.0
    return g.gamma_p * E_t + g.gamma_i * integral + g.gamma_d * deriv


def new_interval(state: SamplerState, gamma: float) -> int:
    """``max(1, theta * (1 - exp((gamma - xi) / xi)))`` rounded half-up."""
    expo = (gamma - state.xi) / state.xi
    raw = -math.inf if expo > 700 else state.theta * (1.0 - math.exp(expo))
    return max(1, int(math.floor(max(1.0, raw) + 0.5)))


@dataclass(frozen=True)
class SampleRecord:
    t: int
    error: float
    gamma: float
    interval: int


@dataclass
class SketchResult:
    sketch: SparseTensor
    mask: MaskTensor
    sample_log: list[SampleRecord]

    @property
    def n_slices(self) -> int:
        return self.mask.dims[0]

    @property
    def sampling_rate(self) -> float:
        return len(self.mask.observed_slices) / self.n_slices

    @property
    def drop_rate(self) -> float:
        return 1.0 - self.sampling_rate

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "E_t", "gamma", "interval"])
            for r in self.sample_log:
                w.writerow([r.t, repr(r.error), repr(r.gamma), r.interval])


class ForecastBank:
    """Vectorised one-step forecasters for every fiber of a J x K grid.

    Fibers in the same bucket share coefficients but keep their own state.
    Zero-bucket fibers forecast 0.
    """

    def __init__(self, models: list[ArimaModel], assignment: BucketAssignment, shape: tuple[int, int]):
        self.shape = tuple(shape)
        J, K = self.shape
        if len(assignment.locations) != J * K:
            raise DimensionError(f"assignment covers {len(assignment.locations)} fibers, grid has {J * K}")
        flat = np.array([j * K + k for j, k in assignment.locations], dtype=np.int64)
        self.groups = []
        for b in sorted(set(assignment.buckets.tolist())):
            idx = flat[assignment.buckets == b]
            model = None if b == ZERO_BUCKET else models[b]
            self.groups.append([model, idx, None, None])

    def prime(self, history: np.ndarray) -> ForecastBank:
        """Set fiber states by filtering a (T0, J, K) history block."""
        history = np.asarray(history, dtype=float)
        flat = history.reshape(len(history), -1)
        for g in self.groups:
            model, idx = g[0], g[1]
            if model is None:
                continue
            if len(history) < model.window:
                raise StateError(f"history of {len(history)} slices shorter than model window {model.window}")
            X = flat[:, idx].T
            _, eps = filter_residuals(model.alpha, model.beta, model.c, model.d, X)
            res = np.zeros((len(idx), model.q))
            if model.q and eps.shape[1]:
                take = min(model.q, eps.shape[1])
                res[:, model.q - take:] = eps[:, -take:]
            g[2] = X[:, X.shape[1] - model.window:]
            g[3] = res
        return self

    def forecast(self) -> np.ndarray:
        out = np.zeros(self.shape[0] * self.shape[1])
        for model, idx, hist, res in self.groups:
            if model is None:
                continue
            if hist is None:
                raise StateError("forecast bank not primed")
            out[idx] = predict_next(model.alpha, model.beta, model.c, model.d, hist, res)
        return out.reshape(self.shape)

    def update(self, observed: np.ndarray, forecast: np.ndarray | None = None) -> None:
        """Advance every fiber by one slice (``observed`` may be the forecast itself)."""
        forecast = self.forecast() if forecast is None else forecast
        obs = np.asarray(observed, dtype=float).reshape(-1)
        eps = obs - np.asarray(forecast).reshape(-1)
        for g in self.groups:
            model, idx, hist, res = g
            if model is None:
                continue
            if model.window:
                g[2] = np.concatenate([hist[:, 1:], obs[idx, None]], axis=1)
            if model.q:
                g[3] = np.concatenate([res[:, 1:], eps[idx, None]], axis=1)


def _assemble(slices: dict[int, np.ndarray], T: int, shape) -> tuple[SparseTensor, MaskTensor]:
    J, K = shape
    dims = (max(T, 1), J, K)
    ts = sorted(slices)
    if ts:
        jj, kk = np.meshgrid(np.arange(J), np.arange(K), indexing="ij")
        subs = np.column_stack([
            np.repeat(ts, J * K), np.tile(jj.ravel(), len(ts)), np.tile(kk.ravel(), len(ts)),
        ])
        vals = np.concatenate([slices[t].ravel() for t in ts])
    else:
        subs, vals = np.zeros((0, 3), dtype=np.int64), np.zeros(0)
    return SparseTensor(dims, subs, vals), MaskTensor(dims, frozenset(ts))


def sketch_stream(slices, bank: ForecastBank, state: SamplerState) -> SketchResult:
    """Adaptive sampling over an ordered stream of J x K slices.

    ``bank`` must already be primed on the data preceding the stream; both it
    and ``state`` are copied, so the caller's objects are left untouched.
    """
    bank = copy.deepcopy(bank)
    state = copy.deepcopy(state)
    kept: dict[int, np.ndarray] = {}
    sample_log = []
    T = 0
    for t, x in enumerate(slices):
        x = np.asarray(x, dtype=float)
        if x.shape != bank.shape:
            raise DimensionError(f"slice {t} has shape {x.shape}, expected {bank.shape}")
        T = t + 1
        pred = bank.forecast()
        if t == state.ns:
            kept[t] = x.copy()
            E = slice_feedback_error(pred, x, state.delta)
            gamma = pid_error(state, E, t)
            step = new_interval(state, gamma)
            state.record(E, t)
            state.ns += step
            sample_log.append(SampleRecord(t, E, gamma, step))
            bank.update(x, pred)
        else:
            bank.update(pred, pred)
    sketch, mask = _assemble(kept, T, bank.shape)
    return SketchResult(sketch, mask, sample_log)


def _baseline(slices, chosen) -> SketchResult:
    arr = np.asarray(slices, dtype=float)
    T = len(arr)
    kept = {int(t): arr[t] for t in chosen}
    sketch, mask = _assemble(kept, T, arr.shape[1:])
    log_ = [SampleRecord(int(t), 0.0, 0.0, 0) for t in sorted(kept)]
    return SketchResult(sketch, mask, log_)


def fixed_rate_sketch(slices, interval: int) -> SketchResult:
    if interval < 1:
        raise ValueError("interval must be >= 1")
    arr = np.asarray(slices, dtype=float)
    res = _baseline(arr, range(0, len(arr), interval))
    res.sample_log[:] = [SampleRecord(r.t, 0.0, 0.0, int(interval)) for r in res.sample_log]
    return res


def random_sketch(slices, keep_fraction: float, seed: int) -> SketchResult:
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    arr = np.asarray(slices, dtype=float)
    rng = np.random.default_rng(seed)
    keep = rng.random(len(arr)) < keep_fraction
    return _baseline(arr, np.flatnonzero(keep))
