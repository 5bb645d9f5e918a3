"""Full model with maximum / average / random aggregation of the ground-truth channels."""
import csv

import numpy as np
from _common import load, parser

from ams.training import run_training

if __name__ == "__main__":
    args = parser(__doc__.splitlines()[0]).parse_args()
    dataset, cfg, out = load(args)
    rows = []
    for mode in ("maximum", "average", "random"):
        tables = [run_training(dataset, cfg.replace(aggregation_mode=mode, seed=s))[1][-1].table for s in range(args.seeds)]
        avg = float(np.mean([t.averages[(0.1, 0.7)] for t in tables]))
        at5 = float(np.mean([t.at(0.5) for t in tables]))
        rows.append((mode, at5, avg))
        print(f"{mode:<8} mAP@0.5={at5:.4f} AVG(0.1-0.7)={avg:.4f}")
    with open(out / "aggregation_modes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["aggregation_mode", "map_0.5", "avg_0.1_0.7"])
        w.writerows(rows)
