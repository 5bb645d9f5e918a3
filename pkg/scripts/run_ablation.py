"""Component ablation (setups A-F) plus adaptive / random / uniform weights.

    python scripts/run_ablation.py --seeds 3 --out results
"""
from _common import load, parser

from ams.ablation import COMPONENT_SETUPS, WEIGHT_SETUPS, mean_average, mean_score, run_ablation, write_ablation_csv

if __name__ == "__main__":
    args = parser(__doc__.splitlines()[0]).parse_args()
    dataset, cfg, out = load(args)
    setups = list(dict.fromkeys(COMPONENT_SETUPS + WEIGHT_SETUPS))
    runs = run_ablation(dataset, cfg, setups, range(args.seeds), log=print)
    write_ablation_csv(out / "ablation.csv", runs)
    print(f"{'setup':<10} {'mAP@.3/.5':>10} {'AVG(.1-.7)':>11}")
    for s in setups:
        print(f"{s:<10} {mean_score(runs, s):>10.4f} {mean_average(runs, s):>11.4f}")
