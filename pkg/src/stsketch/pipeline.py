"""End-to-end driver: prefix training, bucketing, sketching, decomposition, scoring.

Conventions
-----------
* The first ``train_frac`` of the time slices is the offline prefix: ARIMA
  models are trained and fibers bucketed on it, and the forecasters are primed
  on it.  The remaining slices form the online stream that gets sketched.
* Sketches, masks, completions and factors all live on the online segment.
* The reference factors are a rho = 0, full-mask decomposition of the online
  segment; FMS is reported against them (and against the planted factors when
  the data is synthetic).
* Baselines run at the adaptive run's budget: fixed interval
  ``round(1 / keep_rate)``, random keep fraction ``keep_rate``.
* Reports contain no wall-clock values so reruns are byte-identical; timings
  go to ``timings.csv``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .metrics import fms, tcs
from .projection import (
    AggregatedCoefficients,
    ConfigurationError,
    aggregate_coefficients,
    assign_buckets,
    coefficients_record,
    default_model_count,
    fibers_from_tensor,
    train_random_models,
    write_buckets,
    write_models,
)
from .sketcher import ForecastBank, PidGains, SamplerState, SketchResult, fixed_rate_sketch, random_sketch, sketch_stream
from .smooth import FactorizationConfig, build_regularizer, complete_tensor, factorize
from .synth import PRESETS, Burst, SyntheticSpec, generate
from .tensor import DenseTensor, KruskalModel, MaskTensor

log = logging.getLogger(__name__)

STRATEGIES = ("adaptive", "fixed", "random")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


@dataclass
class PipelineConfig:
    input: str | None = None
    synthetic: SyntheticSpec | None = None
    train_frac: float = 0.6
    strategies: tuple[str, ...] = STRATEGIES
    # sampler
    theta: float = 1.0
    xi: float = 3.5
    pid: PidGains = field(default_factory=PidGains)
    delta: float | str = 1.0  # "auto": RMS of the training prefix
    target_drop: float | None = None
    calibrate_on: str = "prefix"  # or "online"
    interval: int | None = None
    keep_fraction: float | None = None
    sample_seed: int = 0
    # projection
    n_models: int | None = None
    order: tuple[int, int, int] = (3, 0, 0)
    select_order: bool = False  # AIC grid search per model instead of the fixed order
    model_seed: int = 0
    # factorization
    rank: int = 5
    rho: float = 600.0
    alpha: tuple[float, ...] | None = None
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    lbfgs_memory: int = 5
    factor_seed: int = 0
    n_starts: int = 1
    outdir: str = "run"

    def __post_init__(self):
        if not 0 < self.train_frac < 1:
            raise ConfigurationError("train_frac must be in (0, 1)")
        if (self.input is None) == (self.synthetic is None):
            raise ConfigurationError("give exactly one of input / synthetic")
        if self.input is not None and not Path(self.input).exists():
            raise ConfigurationError(f"input {self.input} does not exist")
        bad = set(self.strategies) - set(STRATEGIES)
        if bad:
            raise ConfigurationError(f"unknown strategies {sorted(bad)}")
        if isinstance(self.delta, str) and self.delta != "auto":
            raise ConfigurationError("delta must be a number or 'auto'")
        if self.calibrate_on not in ("prefix", "online"):
            raise ConfigurationError("calibrate_on must be 'prefix' or 'online'")

    def factorization(self, rho: float | None = None) -> FactorizationConfig:
        return FactorizationConfig(
            rank=self.rank, rho=self.rho if rho is None else rho, max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance, seed=self.factor_seed,
            lbfgs_memory=self.lbfgs_memory, n_starts=self.n_starts,
        )

    def sampler(self, theta: float | None = None) -> SamplerState:
        if isinstance(self.delta, str):
            raise ConfigurationError("delta='auto' must be resolved against the training prefix first")
        return SamplerState(gains=self.pid, theta=self.theta if theta is None else theta, xi=self.xi, delta=self.delta)


# --------------------------------------------------------------------------- config files

def _parse_value(text: str):
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    parts = [p.strip() for p in text.split(",")]
    vals = []
    for p in parts:
        try:
            vals.append(int(p))
        except ValueError:
            try:
                vals.append(float(p))
            except ValueError:
                vals.append(p)
    return vals[0] if len(vals) == 1 and "," not in text else tuple(vals)


def read_flat_config(path) -> dict:
    """``key = value`` lines; ``#`` comments; comma-separated values become tuples."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def _synthetic_from_flat(flat: dict) -> SyntheticSpec | None:
    keys = {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith("synthetic.")}
    if "bursts" in keys:
        raw = keys["bursts"]
        raw = raw if isinstance(raw, tuple) else (raw,)
        keys["bursts"] = tuple(_parse_burst(str(b)) for b in raw if b)
    if "ar" in keys:
        raw = keys["ar"]
        raw = raw if isinstance(raw, tuple) else (raw,)
        keys["ar"] = tuple(tuple(float(x) for x in str(c).split(":")) for c in raw)
    if "dims" in keys:
        keys["dims"] = tuple(int(x) for x in keys["dims"])
    preset = keys.pop("preset", None)
    if flat.get("spec"):
        base = SyntheticSpec.from_toml(flat["spec"])
    elif preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown synthetic preset {preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[preset]()
    elif keys:
        return SyntheticSpec.from_mapping(keys)
    else:
        return None
    return base.replace(**keys) if keys else base


def _parse_burst(text: str) -> Burst:
    """``start:magnitude:duration[:shape]``"""
    parts = text.split(":")
    if not 2 <= len(parts) <= 4:
        raise ConfigurationError(f"bad burst {text!r}; expected start:magnitude:duration[:shape]")
    start, mag = int(parts[0]), float(parts[1])
    dur = int(parts[2]) if len(parts) > 2 else 1
    return Burst(start, mag, dur, parts[3]) if len(parts) > 3 else Burst(start, mag, dur)


_TUPLE_KEYS = {"strategies", "alpha", "order"}


def config_from_flat(flat: dict, **overrides) -> PipelineConfig:
    names = {f.name for f in dataclasses.fields(PipelineConfig)}
    kw = {}
    for k, v in flat.items():
        if k in names and k not in ("synthetic", "pid"):
            kw[k] = (v if isinstance(v, tuple) else (v,)) if k in _TUPLE_KEYS and v is not None else v
    if "pid" in flat:
        kw["pid"] = PidGains(*flat["pid"])
    synth = _synthetic_from_flat(flat)
    if synth is not None:
        kw["synthetic"] = synth
    kw.update(overrides)
    return PipelineConfig(**kw)


# --------------------------------------------------------------------------- stages

def load_data(cfg: PipelineConfig) -> tuple[np.ndarray, KruskalModel | None]:
    if cfg.synthetic is not None:
        X, planted = generate(cfg.synthetic)
        return X.data, planted
    return io.read_dense(cfg.input).data, None


def split(X: np.ndarray, train_frac: float) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(train_frac * len(X)))
    if n_train < 1 or n_train >= len(X):
        raise ConfigurationError(f"train_frac {train_frac} leaves an empty segment for I={len(X)}")
    return X[:n_train], X[n_train:]


def resolve_delta(cfg: PipelineConfig, prefix: np.ndarray) -> PipelineConfig:
    """Replace ``delta='auto'`` by the RMS of the prefix (1.0 if the prefix is all zero)."""
    if cfg.delta != "auto":
        return cfg
    rms = float(np.sqrt(np.mean(prefix ** 2)))
    return dataclasses.replace(cfg, delta=rms if rms > 0 else 1.0)


@dataclass
class TrainedModels:
    models: list
    assignment: object
    coefficients: AggregatedCoefficients

    def bank(self, history: np.ndarray) -> ForecastBank:
        return ForecastBank(self.models, self.assignment, history.shape[1:]).prime(history)


def train_stage(prefix: np.ndarray, cfg: PipelineConfig) -> TrainedModels:
    fibers = fibers_from_tensor(prefix)
    L = cfg.n_models or default_model_count(len(fibers))
    p, d, q = cfg.order
    models = train_random_models(fibers, L, cfg.model_seed, p, d, q, select=cfg.select_order)
    assignment = assign_buckets(fibers, models)
    coef = aggregate_coefficients(assignment, models)
    return TrainedModels(models, assignment, coef)


def run_strategy(strategy: str, online: np.ndarray, trained: TrainedModels, prefix: np.ndarray,
                 cfg: PipelineConfig, theta: float | None = None, keep_rate: float | None = None) -> SketchResult:
    if strategy == "adaptive":
        return sketch_stream(online, trained.bank(prefix), cfg.sampler(theta))
    if strategy == "fixed":
        interval = cfg.interval if keep_rate is None else max(1, int(math.floor(1.0 / keep_rate + 0.5)))
        if interval is None:
            raise ConfigurationError("fixed strategy needs an interval or an adaptive run to match")
        return fixed_rate_sketch(online, interval)
    keep = cfg.keep_fraction if keep_rate is None else keep_rate
    if keep is None:
        raise ConfigurationError("random strategy needs keep_fraction or an adaptive run to match")
    return random_sketch(online, keep, cfg.sample_seed)


def reference_factors(online: np.ndarray, cfg: PipelineConfig) -> KruskalModel:
    """rho = 0 decomposition of the fully observed online segment."""
    T = DenseTensor(online)
    res = factorize(T.to_sparse(keep_zeros=True), MaskTensor.full(T.dims), cfg.factorization(rho=0.0))
    return res.model


def decompose(sketch: SketchResult, coef: AggregatedCoefficients, cfg: PipelineConfig, rho: float | None = None):
    alpha = cfg.alpha if cfg.alpha is not None else coef.alpha_bar
    L = build_regularizer(alpha, sketch.mask.dims[0])
    return factorize(sketch.sketch, sketch.mask, cfg.factorization(rho), L)


def score(online: np.ndarray, sketch: SketchResult, model: KruskalModel, reference: KruskalModel,
          planted: KruskalModel | None) -> dict:
    completed = complete_tensor(sketch.sketch, sketch.mask, model)
    out = {"fms": fms(reference, model).fms}
    try:
        out["tcs"] = tcs(online, completed, sketch.mask)
    except ValueError:
        out["tcs"] = 0.0
    if planted is not None:
        out["fms_planted"] = fms(planted, model).fms
    return out, completed


def online_planted(planted: KruskalModel | None, n_train: int) -> KruskalModel | None:
    if planted is None:
        return None
    return KruskalModel(planted.A[n_train:] * planted.weights, planted.B, planted.C)


# --------------------------------------------------------------------------- calibration

@dataclass(frozen=True)
class CalibrationRow:
    target: float
    theta: float | None
    achieved: float | None
    attained: bool


def replay_drop_rate(stream: np.ndarray, history: np.ndarray, trained: TrainedModels, cfg: PipelineConfig,
                     theta: float) -> float:
    """Drop rate of adaptive sampling over ``stream`` with forecasters primed on ``history``."""
    return sketch_stream(stream, trained.bank(history), cfg.sampler(theta)).drop_rate


def calibration_streams(prefix: np.ndarray, online: np.ndarray, trained: TrainedModels, mode: str):
    """(stream, history) pair used to calibrate theta.

    ``"prefix"`` replays the training prefix (no look-ahead); ``"online"``
    replays the online stream itself, which matches the budget exactly.
    """
    if mode == "prefix":
        h = max([m.window for m in trained.models] + [1])
        return prefix[h:], prefix[:h]
    if mode == "online":
        return online, prefix
    raise ConfigurationError(f"unknown calibration mode {mode!r}")


def calibrate_theta(stream: np.ndarray, history: np.ndarray, trained: TrainedModels, cfg: PipelineConfig, targets,
                    tol: float = 0.02, theta_max: float = 1e4, max_steps: int = 60) -> list[CalibrationRow]:
    """Bisection on theta so the replayed drop rate hits each target within ``tol``."""
    cache: dict[float, float] = {}

    def rate(theta):
        if theta not in cache:
            cache[theta] = replay_drop_rate(stream, history, trained, cfg, theta)
        return cache[theta]

    rows = []
    for target in targets:
        if target <= 0:
            rows.append(CalibrationRow(target, 1.0, rate(1.0), abs(rate(1.0) - target) <= tol))
            continue
        lo, hi = 1.0, 2.0
        while rate(hi) < target - tol:
            lo, hi = hi, hi * 2
            if hi > theta_max:
                break
        if hi > theta_max:
            rows.append(CalibrationRow(target, None, None, False))
            continue
        best = min((lo, hi), key=lambda th: abs(rate(th) - target))
        for _ in range(max_steps):
            if abs(rate(best) - target) <= tol:
                break
            mid = 0.5 * (lo + hi)
            if rate(mid) < target:
                lo = mid
            else:
                hi = mid
            best = min((best, mid), key=lambda th: abs(rate(th) - target))
        rows.append(CalibrationRow(target, best, rate(best), abs(rate(best) - target) <= tol))
    return rows


# --------------------------------------------------------------------------- full runs

@dataclass
class ExperimentReport:
    records: list[dict]
    summary: list[dict] = field(default_factory=list)

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        io.write_json(outdir / "report.json", {"records": self.records, "summary": self.summary})
        _write_csv(outdir / "report.csv", self.records)
        if self.summary:
            _write_csv(outdir / "summary.csv", self.summary)


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def _write_csv(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in keys])


class _Timer:
    def __init__(self):
        self.rows = []

    def run(self, label, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        self.rows.append((label, time.perf_counter() - t0))
        return out

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "seconds"])
            w.writerows([(k, f"{v:.3f}") for k, v in self.rows])


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise PipelineError(name, exc) from exc


def run_pipeline(cfg: PipelineConfig) -> ExperimentReport:
    """Train, sketch, decompose, complete and score every configured strategy."""
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    X, planted = _stage("load", load_data, cfg)
    io.write_tensor(out / "full.tns", DenseTensor(X))
    prefix, online = _stage("split", split, X, cfg.train_frac)
    cfg = resolve_delta(cfg, prefix)
    io.write_tensor(out / "online.tns", DenseTensor(online))

    trained = _stage("train-models", timer.run, "train-models", train_stage, prefix, cfg)
    write_models(out / "models.jsonl", trained.models)
    write_buckets(out / "buckets.txt", trained.assignment)
    io.write_json(out / "coefficients.json", coefficients_record(trained.coefficients))

    theta = cfg.theta
    if cfg.target_drop is not None and "adaptive" in cfg.strategies:
        stream, history = calibration_streams(prefix, online, trained, cfg.calibrate_on)
        row = _stage("calibrate", calibrate_theta, stream, history, trained, cfg, [cfg.target_drop])[0]
        if row.theta is None:
            raise PipelineError("calibrate", ConfigurationError(f"drop rate {cfg.target_drop} unattainable"))
        theta = row.theta

    ref_path = out / "factors_reference.txt"
    if ref_path.exists():
        reference = io.read_factors(ref_path)
    else:
        reference = _stage("reference", timer.run, "reference", reference_factors, online, cfg)
        io.write_factors(ref_path, reference)
    truth = online_planted(planted, len(prefix))

    records = []
    keep_rate = None
    for strategy in cfg.strategies:
        sk = _stage(f"sketch-{strategy}", timer.run, f"sketch-{strategy}", run_strategy,
                    strategy, online, trained, prefix, cfg, theta, keep_rate)
        if strategy == "adaptive":
            keep_rate = sk.sampling_rate
        io.write_tensor(out / f"sketch_{strategy}.tns", sk.sketch)
        io.write_mask(out / f"mask_{strategy}.txt", sk.mask)
        sk.write_log(out / f"samples_{strategy}.csv")
        fit = _stage(f"decompose-{strategy}", timer.run, f"decompose-{strategy}", decompose, sk, trained.coefficients, cfg)
        io.write_factors(out / f"factors_{strategy}.txt", fit.model)
        scores, completed = _stage(f"metrics-{strategy}", score, online, sk, fit.model, reference, truth)
        io.write_tensor(out / f"completed_{strategy}.tns", completed)
        records.append({
            "strategy": strategy,
            "theta": float(theta) if strategy == "adaptive" else None,
            "drop_rate": sk.drop_rate,
            "observed_slices": len(sk.mask.observed_slices),
            "rho": cfg.rho,
            "converged": fit.converged,
            **scores,
            "factors": f"factors_{strategy}.txt",
            "completed": f"completed_{strategy}.tns",
        })
    report = ExperimentReport(records)
    report.write(out)
    timer.write(out / "timings.csv")
    return report


@dataclass
class ExperimentConfig:
    """Strategy x drop-rate x seed grid on synthetic data."""

    base: PipelineConfig
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    drop_rates: tuple[float, ...] = (0.5, 0.8)
    rhos: tuple[float, ...] | None = None  # extra rho values scored on the adaptive sketch

    @classmethod
    def from_flat(cls, flat: dict, **overrides) -> ExperimentConfig:
        flat = dict(flat)
        seeds = flat.pop("seeds", (0, 1, 2, 3, 4))
        drops = flat.pop("drop_rates", (0.5, 0.8))
        rhos = flat.pop("rhos", None)
        as_tuple = lambda v: v if isinstance(v, tuple) else (v,)  # noqa: E731
        base = config_from_flat(flat, **overrides)
        return cls(base, tuple(as_tuple(seeds)), tuple(float(d) for d in as_tuple(drops)),
                   None if rhos is None else tuple(float(r) for r in as_tuple(rhos)))


def run_experiment(exp: ExperimentConfig) -> ExperimentReport:
    """For each seed: generate data, train once, compute the reference once, then
    for each target drop rate calibrate theta and score all strategies."""
    base = exp.base
    out = Path(base.outdir)
    out.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    records = []
    for seed in exp.seeds:
        cfg = dataclasses.replace(
            base,
            synthetic=base.synthetic.replace(seed=seed) if base.synthetic is not None else None,
            model_seed=base.model_seed + seed, sample_seed=base.sample_seed + seed,
        )
        X, planted = _stage("load", load_data, cfg)
        prefix, online = split(X, cfg.train_frac)
        cfg = resolve_delta(cfg, prefix)
        trained = _stage("train-models", timer.run, f"train-{seed}", train_stage, prefix, cfg)
        ref_path = out / f"reference_seed{seed}.txt"
        reference = _stage("reference", timer.run, f"reference-{seed}", reference_factors, online, cfg)
        io.write_factors(ref_path, reference)
        truth = online_planted(planted, len(prefix))
        stream, history = calibration_streams(prefix, online, trained, cfg.calibrate_on)
        calib = _stage("calibrate", calibrate_theta, stream, history, trained, cfg, exp.drop_rates)
        for target, row in zip(exp.drop_rates, calib):
            if row.theta is None:
                records.append({"seed": seed, "target": target, "strategy": "adaptive", "status": "unattainable"})
                continue
            keep_rate = None
            for strategy in cfg.strategies:
                sk = _stage(f"sketch-{strategy}", run_strategy, strategy, online, trained, prefix, cfg, row.theta, keep_rate)
                if strategy == "adaptive":
                    keep_rate = sk.sampling_rate
                rhos = exp.rhos if (exp.rhos and strategy == "adaptive") else (cfg.rho,)
                for rho in rhos:
                    tag = f"seed{seed}_drop{int(round(target * 100))}_{strategy}_rho{rho:g}"
                    fit = _stage(f"decompose-{strategy}", timer.run, tag, decompose, sk, trained.coefficients, cfg, rho)
                    io.write_factors(out / f"factors_{tag}.txt", fit.model)
                    scores, _ = _stage(f"metrics-{strategy}", score, online, sk, fit.model, reference, truth)
                    records.append({
                        "seed": seed, "target": target, "strategy": strategy,
                        "theta": float(row.theta) if strategy == "adaptive" else None,
                        "drop_rate": sk.drop_rate, "rho": float(rho), **scores,
                        "status": "ok", "factors": f"factors_{tag}.txt",
                    })
    report = ExperimentReport(records, summarize(records))
    report.write(out)
    timer.write(out / "timings.csv")
    return report


def summarize(records: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        if r.get("status") != "ok":
            continue
        groups.setdefault((r["target"], r["strategy"], r["rho"]), []).append(r)
    out = []
    for (target, strategy, rho), rows in sorted(groups.items(), key=lambda kv: (kv[0][0], STRATEGIES.index(kv[0][1]), kv[0][2])):
        row = {"target": target, "strategy": strategy, "rho": rho, "runs": len(rows),
               "drop_rate": float(np.mean([r["drop_rate"] for r in rows])),
               "fms": float(np.mean([r["fms"] for r in rows])),
               "tcs": float(np.mean([r["tcs"] for r in rows]))}
        if all("fms_planted" in r for r in rows):
            row["fms_planted"] = float(np.mean([r["fms_planted"] for r in rows]))
        out.append(row)
    return out
