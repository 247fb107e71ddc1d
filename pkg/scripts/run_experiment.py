"""Run a strategy / drop-rate / seed grid from a flat config and print the summary.

    python3 scripts/run_experiment.py configs/bursty_experiment.cfg [--outdir DIR]
"""

import argparse
import logging

from stsketch.pipeline import ExperimentConfig, read_flat_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--outdir")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    over = {"outdir": args.outdir} if args.outdir else {}
    exp = ExperimentConfig.from_flat(read_flat_config(args.config), **over)
    report = run_experiment(exp)
    cols = ["target", "strategy", "rho", "runs", "drop_rate", "fms", "tcs"]
    print(" ".join(f"{c:>9}" for c in cols))
    for row in report.summary:
        print(" ".join(f"{row[c]:>9.3f}" if isinstance(row[c], float) else f"{row[c]:>9}" for c in cols))
    print(f"artifacts in {exp.base.outdir}")


if __name__ == "__main__":
    main()
