"""mAP@0.5 of the full model as the sampling offset eta varies.

Large eta flattens the weights towards uniform sampling.
"""
import csv

import numpy as np
from _common import load, parser

from ams.training import run_training

if __name__ == "__main__":
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--etas", default="0.25,0.5,0.75,1,2,5,1000")
    args = p.parse_args()
    dataset, cfg, out = load(args)
    rows = []
    for eta in [float(x) for x in args.etas.split(",")]:
        scores = []
        for seed in range(args.seeds):
            _, metrics = run_training(dataset, cfg.replace(eta_sampling=eta, seed=seed))
            scores.append(metrics[-1].table.at(0.5))
        rows.append((eta, float(np.mean(scores)), float(np.std(scores))))
        print(f"eta={eta:g}  mAP@0.5={rows[-1][1]:.4f} +- {rows[-1][2]:.4f}")
    with open(out / "eta_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eta", "map_0.5_mean", "map_0.5_std"])
        w.writerows(rows)
