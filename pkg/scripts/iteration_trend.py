"""mAP@0.5 after each training iteration of the full model, per seed."""
import csv

import numpy as np
from _common import load, parser

from ams.training import run_training

if __name__ == "__main__":
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--iterations", type=int, default=5)
    args = p.parse_args()
    dataset, cfg, out = load(args)
    traces = []
    for seed in range(args.seeds):
        _, metrics = run_training(dataset, cfg.replace(num_iterations=args.iterations, seed=seed))
        traces.append([m.table.at(0.5) for m in metrics])
        print(f"seed {seed}: " + " ".join(f"{v:.3f}" for v in traces[-1]))
    traces = np.array(traces)
    print("mean gain per iteration:", np.round(np.diff(traces.mean(axis=0)), 4).tolist())
    with open(out / "iteration_trend.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", *[f"iter{i}" for i in range(traces.shape[1])]])
        for seed, row in enumerate(traces):
            w.writerow([seed, *(f"{v:.6f}" for v in row)])
