"""Epoch means of the estimated prior, plus AP50 for hand-tuned fixed priors.

    python3 scripts/prior_trajectory.py --out runs/prior [--fixed 0.02,0.05,0.1,0.2]
"""

import argparse
from pathlib import Path

import numpy as np

from pudet.experiment import ExperimentSpec, MetricSpec, median_metric, run_experiment
from pudet.trainer import TrainConfig


def floats(text):
    return tuple(float(v) for v in text.split(",")) if text else ()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/prior"))
    ap.add_argument("--rho", type=floats, default=(0.4, 0.5, 0.6))
    ap.add_argument("--fixed", type=floats, default=(0.02, 0.05, 0.1, 0.2))
    ap.add_argument("--seeds", type=lambda s: tuple(int(v) for v in s.split(",")), default=(0, 1, 2, 3, 4))
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args()

    spec = ExperimentSpec(
        rho_grid=args.rho,
        settings=("pu",),
        seeds=args.seeds,
        hand_tuned_priors=args.fixed,
        train=TrainConfig(epochs=args.epochs, track_forgetting=False),
        metrics=MetricSpec(metrics=("ap",)),
    )
    rows, _ = run_experiment(spec, args.out, jobs=args.jobs)

    for rho in spec.rho_grid:
        print(f"rho {rho:g}: epoch means of pi_hat per seed")
        for seed in spec.seeds:
            data = np.genfromtxt(args.out / "pi_hat" / f"pu_rho{rho:g}_seed{seed}.csv", delimiter=",", names=True)
            means = [data["pi_hat"][data["epoch"] == e].mean() for e in np.unique(data["epoch"])]
            print(f"  seed {seed}: " + " ".join(f"{m:.4f}" for m in means))
        line = [f"estimated {median_metric(rows, 'pu', rho):.4f}"]
        line += [f"fixed {p:g} {median_metric(rows, f'pu-fixed-{p:g}', rho):.4f}" for p in spec.hand_tuned_priors]
        print("  median AP50: " + ", ".join(line))


if __name__ == "__main__":
    main()
