"""Drop rate of adaptive sampling as a function of theta.

Trains the fiber models on the prefix of a generated (or loaded) tensor, then
replays the sampler for a grid of theta values and prints the mapping.

    python3 scripts/theta_sweep.py --preset bursty --xi 50 --delta auto
"""

import argparse

import numpy as np

from stsketch import io
from stsketch.pipeline import PipelineConfig, calibration_streams, replay_drop_rate, resolve_delta, split, train_stage
from stsketch.synth import PRESETS, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--input", help=".tns tensor (otherwise a synthetic preset is generated)")
    ap.add_argument("--preset", choices=sorted(PRESETS), default="bursty")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--xi", type=float, default=3.5)
    ap.add_argument("--delta", default="1.0")
    ap.add_argument("--n-models", type=int, default=5)
    ap.add_argument("--on", choices=("prefix", "online"), default="prefix")
    ap.add_argument("--thetas", default="1,2,4,8,16,32,64,128")
    args = ap.parse_args()

    X = io.read_dense(args.input).data if args.input else generate(PRESETS[args.preset](args.seed))[0].data
    delta = args.delta if args.delta == "auto" else float(args.delta)
    cfg = PipelineConfig(synthetic=PRESETS[args.preset](args.seed), xi=args.xi, delta=delta, n_models=args.n_models)
    prefix, online = split(X, cfg.train_frac)
    cfg = resolve_delta(cfg, prefix)
    trained = train_stage(prefix, cfg)
    stream, history = calibration_streams(prefix, online, trained, args.on)
    print(f"delta = {cfg.delta:.4g}, xi = {cfg.xi:g}, replay over {len(stream)} slices ({args.on})")
    print(f"{'theta':>8} {'drop_rate':>10}")
    for theta in (float(t) for t in args.thetas.split(",")):
        print(f"{theta:>8g} {replay_drop_rate(stream, history, trained, cfg, theta):>10.3f}")
    print(f"aggregated AR coefficients: {np.round(trained.coefficients.alpha_bar, 4).tolist()}")


if __name__ == "__main__":
    main()
