"""Command line interface: ``stsketch <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import io
from .ingest import NYC_GRID, Grid, ingest_csv
from .metrics import fms, tcs
from .pipeline import (
    ExperimentConfig,
    PipelineConfig,
    PipelineError,
    calibrate_theta,
    calibration_streams,
    config_from_flat,
    load_data,
    read_flat_config,
    resolve_delta,
    run_experiment,
    run_pipeline,
    split,
    train_stage,
)
from .projection import (
    AggregatedCoefficients,
    ConfigurationError,
    coefficients_from_record,
    coefficients_record,
    read_buckets,
    read_models,
    write_buckets,
    write_models,
)
from .sketcher import ForecastBank, PidGains, SamplerState, fixed_rate_sketch, random_sketch, sketch_stream
from .smooth import FactorizationConfig, build_regularizer, complete_tensor, factorize
from .synth import PRESETS, SyntheticSpec, generate

log = logging.getLogger("stsketch")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _dump(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


# --------------------------------------------------------------------------- subcommands

def cmd_generate(args) -> None:
    spec = SyntheticSpec.from_toml(args.spec) if args.spec else PRESETS[args.preset]()
    if args.seed is not None:
        spec = spec.replace(seed=args.seed)
    X, planted = generate(spec)
    io.write_tensor(args.out, X)
    if args.planted:
        io.write_factors(args.planted, planted)


def cmd_ingest(args) -> None:
    grid = Grid.parse(args.grid) if args.grid else NYC_GRID
    res = ingest_csv(args.csv, grid, args.bin, axis_order=args.axis_order)
    io.write_tensor(args.out, res.tensor)
    _dump({"dims": list(res.tensor.dims), "accepted": res.accepted, "accepted_rows": res.accepted_rows,
           "outside_grid": res.outside_grid, "skipped_rows": res.skipped_rows, "origin": res.origin})


def _prefix_config(args) -> PipelineConfig:
    return PipelineConfig(input=args.input, train_frac=args.train_frac, n_models=args.n_models,
                          order=args.order, select_order=args.select_order, model_seed=args.seed)


def cmd_train_models(args) -> None:
    cfg = _prefix_config(args)
    X = io.read_dense(args.input).data
    prefix, _ = split(X, cfg.train_frac)
    trained = train_stage(prefix, cfg)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_models(out / "models.jsonl", trained.models)
    write_buckets(out / "buckets.txt", trained.assignment)
    io.write_json(out / "coefficients.json", coefficients_record(trained.coefficients))
    _dump(coefficients_record(trained.coefficients))


def cmd_sketch(args) -> None:
    X = io.read_dense(args.input).data
    prefix, online = split(X, args.train_frac)
    if args.strategy == "fixed":
        res = fixed_rate_sketch(online, args.interval)
    elif args.strategy == "random":
        res = random_sketch(online, args.keep_fraction, args.seed)
    else:
        if args.models:
            if not args.buckets:
                raise ConfigurationError("--models needs --buckets")
            models, assignment = read_models(args.models), read_buckets(args.buckets)
        else:
            trained = train_stage(prefix, _prefix_config(args))
            models, assignment = trained.models, trained.assignment
        delta = args.delta
        if delta == "auto":
            delta = resolve_delta(PipelineConfig(input=args.input, delta="auto"), prefix).delta
        bank = ForecastBank(models, assignment, online.shape[1:]).prime(prefix)
        state = SamplerState(gains=PidGains.parse(args.pid), theta=args.theta, xi=args.xi, delta=float(delta))
        res = sketch_stream(online, bank, state)
    io.write_tensor(args.output, res.sketch)
    io.write_mask(args.mask, res.mask)
    if args.log:
        res.write_log(args.log)
    _dump({"strategy": args.strategy, "slices": res.n_slices, "observed": len(res.mask.observed_slices),
           "drop_rate": res.drop_rate})


def cmd_decompose(args) -> None:
    Y = io.read_tensor(args.input)
    W = io.read_mask(args.mask)
    if args.coefficients:
        alpha = coefficients_from_record(io.read_json(args.coefficients)).alpha_bar
    elif args.alpha:
        alpha = args.alpha
    else:
        alpha = AggregatedCoefficients.default().alpha_bar
    config = FactorizationConfig(rank=args.rank, rho=args.rho, max_iterations=args.max_iterations,
                                 gradient_tolerance=args.tol, seed=args.seed, lbfgs_memory=args.memory,
                                 n_starts=args.n_starts)
    res = factorize(Y, W, config, build_regularizer(alpha, W.dims[0]))
    io.write_factors(args.out, res.model)
    _dump({"converged": res.converged, "iterations": res.iterations, "objective": res.objective_trace[-1],
           "message": res.message})


def cmd_complete(args) -> None:
    Y = io.read_tensor(args.input)
    W = io.read_mask(args.mask)
    model = io.read_factors(args.factors)
    io.write_tensor(args.out, complete_tensor(Y, W, model))


def cmd_metrics(args) -> None:
    report = {}
    if args.ref and args.est:
        m = fms(io.read_factors(args.ref), io.read_factors(args.est), optimal=args.optimal)
        report["fms"] = m.fms
        report["matching"] = list(m.column_matching)
        report["congruences"] = list(m.congruences)
    if args.tensor and args.completed and args.mask:
        report["tcs"] = tcs(io.read_dense(args.tensor), io.read_dense(args.completed), io.read_mask(args.mask))
    if not report:
        raise ConfigurationError("give --ref/--est and/or --tensor/--completed/--mask")
    if args.out:
        io.write_json(args.out, report)
    _dump(report)


def _load_config(args) -> PipelineConfig:
    flat = read_flat_config(args.config)
    over = {"outdir": args.outdir} if getattr(args, "outdir", None) else {}
    return config_from_flat(flat, **over)


def cmd_calibrate(args) -> None:
    if args.config:
        cfg = _load_config(args)
    else:
        cfg = PipelineConfig(input=args.input, train_frac=args.train_frac, xi=args.xi, pid=PidGains.parse(args.pid),
                             delta=args.delta, n_models=args.n_models, order=args.order,
                             select_order=args.select_order, model_seed=args.seed, calibrate_on=args.on)
    X, _ = load_data(cfg)
    prefix, online = split(X, cfg.train_frac)
    cfg = resolve_delta(cfg, prefix)
    trained = train_stage(prefix, cfg)
    stream, history = calibration_streams(prefix, online, trained, cfg.calibrate_on)
    rows = calibrate_theta(stream, history, trained, cfg, args.targets, tol=args.tol)
    table = [{"target": r.target, "theta": r.theta, "achieved": r.achieved, "attained": r.attained} for r in rows]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["target", "theta", "achieved", "attained"])
            w.writeheader()
            w.writerows(table)
    _dump(table)


def cmd_run(args) -> None:
    report = run_pipeline(_load_config(args))
    _dump(report.records)


def cmd_experiment(args) -> None:
    flat = read_flat_config(args.config)
    over = {"outdir": args.outdir} if args.outdir else {}
    exp = ExperimentConfig.from_flat(flat, **over)
    if args.seeds:
        exp = dataclasses.replace(exp, seeds=args.seeds)
    report = run_experiment(exp)
    _dump(report.summary)


# --------------------------------------------------------------------------- parser

def _add_prefix_args(p) -> None:
    p.add_argument("--train-frac", type=float, default=0.6)
    p.add_argument("--n-models", type=int, default=None, help="number of random ARIMA models (default 1%% of fibers)")
    p.add_argument("--order", type=_ints, default=(3, 0, 0), help="p,d,q")
    p.add_argument("--select-order", action="store_true", help="AIC grid search over p<=5, d<=1, q<=1")
    p.add_argument("--seed", type=int, default=0)


def _delta(text: str):
    return text if text == "auto" else float(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stsketch", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthetic tensor with planted CP factors")
    p.add_argument("--spec", help="TOML synthetic spec (overrides --preset)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="default")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--planted")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="rasterise a CSV of events into a count tensor")
    p.add_argument("--csv", required=True)
    p.add_argument("--grid", help="lat_min,lat_max,lon_min,lon_max,cell (default: NYC grid)")
    p.add_argument("--bin", default="1d")
    p.add_argument("--axis-order", choices=("lat_lon", "lon_lat"), default="lat_lon")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-models", help="fit random ARIMA models on the prefix and bucket fibers")
    p.add_argument("--input", required=True)
    _add_prefix_args(p)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_train_models)

    p = sub.add_parser("sketch", help="sample slices of the online segment")
    p.add_argument("--strategy", choices=("adaptive", "fixed", "random"), default="adaptive")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--xi", type=float, default=3.5)
    p.add_argument("--pid", default="0.7,0.2,0.1")
    p.add_argument("--delta", type=_delta, default=1.0, help="sanity bound, or 'auto' for the prefix RMS")
    p.add_argument("--interval", type=int, default=2, help="fixed strategy interval")
    p.add_argument("--keep-fraction", type=float, default=0.5, help="random strategy keep fraction")
    p.add_argument("--models", help="models.jsonl from train-models (trained on the fly if omitted)")
    p.add_argument("--buckets", help="buckets.txt from train-models")
    p.add_argument("--input", required=True)
    _add_prefix_args(p)
    p.add_argument("--output", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("decompose", help="smooth CP factorization of a sketch")
    p.add_argument("--input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--rho", type=float, default=600.0)
    p.add_argument("--alpha", type=_floats, help="AR coefficients for the regularizer")
    p.add_argument("--coefficients", help="coefficients.json from train-models")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--memory", type=int, default=5)
    p.add_argument("--n-starts", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("complete", help="fill unobserved slices from factors")
    p.add_argument("--input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--factors", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("metrics", help="FMS between factor files and TCS of a completion")
    p.add_argument("--ref")
    p.add_argument("--est")
    p.add_argument("--optimal", action="store_true", help="optimal instead of greedy column matching")
    p.add_argument("--tensor")
    p.add_argument("--completed")
    p.add_argument("--mask")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("calibrate", help="theta giving each target drop rate")
    p.add_argument("--config", help="flat key=value config (overrides the flags below)")
    p.add_argument("--input")
    p.add_argument("--targets", type=_floats, default=(0.5, 0.8))
    p.add_argument("--xi", type=float, default=3.5)
    p.add_argument("--pid", default="0.7,0.2,0.1")
    p.add_argument("--delta", type=_delta, default=1.0)
    p.add_argument("--on", choices=("prefix", "online"), default="prefix", help="stream replayed for calibration")
    p.add_argument("--tol", type=float, default=0.02)
    _add_prefix_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("experiment", help="strategy x drop-rate x seed grid")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir")
    p.add_argument("--seeds", type=_ints)
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
