"""Before/after-step detection rates of labeled and unlabeled objects, PN vs PU.

    python3 scripts/forgetting.py --rho 0.1 [--seeds 0,1,2,3,4]
"""

import argparse

import numpy as np

from pudet.experiment import Cell, ExperimentSpec, MetricSpec, run_cell
from pudet.trainer import TrainConfig, detection_rate_curves


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rho", type=float, default=0.1)
    ap.add_argument("--seeds", type=lambda s: tuple(int(v) for v in s.split(",")), default=(0, 1, 2, 3, 4))
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--lr", type=float, default=0.05)
    args = ap.parse_args()

    spec = ExperimentSpec(
        rho_grid=(args.rho,),
        seeds=args.seeds,
        train=TrainConfig(epochs=args.epochs, learning_rate=args.lr),
        metrics=MetricSpec(metrics=("ap",)),
    )
    for setting in ("pn", "pu"):
        dips = []
        for seed in spec.seeds:
            outcome = run_cell(spec, Cell(setting, args.rho, seed), keep_train=True)
            curves = detection_rate_curves(outcome.train.tracker)
            for stratum in ("labeled", "unlabeled"):
                before, after = curves[(stratum, "before")], curves[(stratum, "after")]
                if before is None:
                    continue
                print(f"{setting} seed {seed} {stratum:>9} before " + " ".join(f"{v:5.1f}" for v in before))
                print(f"{setting} seed {seed} {stratum:>9} after  " + " ".join(f"{v:5.1f}" for v in after))
                if stratum == "unlabeled":
                    dips.append(float(np.mean(np.subtract(before[1:], after[1:]))))
        print(f"{setting}: median unlabeled dip over epochs >= 2: {np.median(dips):.3f} percentage points\n")


if __name__ == "__main__":
    main()
