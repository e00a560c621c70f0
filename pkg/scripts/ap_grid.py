"""Median AP50 and recall@64 per (setting, rho) over seeds.

    python3 scripts/ap_grid.py --out runs/grid [--seeds 0,1,2,3,4] [--epochs 10]
"""

import argparse
from pathlib import Path

from pudet.experiment import ExperimentSpec, MetricSpec, median_metric, run_experiment
from pudet.trainer import TrainConfig


def floats(text):
    return tuple(float(v) for v in text.split(","))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/grid"))
    ap.add_argument("--rho", type=floats, default=(0.0, 0.1, 0.3, 0.5, 0.7))
    ap.add_argument("--seeds", type=lambda s: tuple(int(v) for v in s.split(",")), default=(0, 1, 2, 3, 4))
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--architecture", default="linear", choices=["linear", "mlp-1-hidden"])
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args()

    spec = ExperimentSpec(
        rho_grid=args.rho,
        seeds=args.seeds,
        train=TrainConfig(epochs=args.epochs, architecture=args.architecture, track_forgetting=False),
        metrics=MetricSpec(metrics=("ap", "recall")),
    )
    rows, failures = run_experiment(spec, args.out, jobs=args.jobs)
    print(f"{'rho':>5} {'setting':>8} {'AP50':>8} {'recall@64':>10}")
    for rho in spec.rho_grid:
        for setting in spec.settings:
            ap50 = median_metric(rows, setting, rho)
            rec = median_metric(rows, setting, rho, f"recall@{spec.metrics.recall_k}", spec.metrics.recall_iou)
            print(f"{rho:5.2f} {setting:>8} {ap50:8.4f} {rec:10.4f}")
    if failures:
        print(f"{len(failures)} failed cells, see {args.out / 'failed_cells.csv'}")


if __name__ == "__main__":
    main()
