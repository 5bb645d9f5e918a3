"""Component ablation: run named setups over several seeds and tabulate mAP.

A setup name is a preset letter (``"A"``..``"F"``) optionally followed by
``/<sampling_mode>``, e.g. ``"F/random"`` swaps the adaptive weights of
setup F for random ones.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, apply_preset
from .errors import ConfigError
from .infer import MapTable
from .synthgen import Dataset
from .training import IterationMetrics, run_training

COMPONENT_SETUPS = ("A", "B", "C", "D", "E", "F")
WEIGHT_SETUPS = ("F", "F/random", "F/uniform")


@dataclass
class AblationRun:
    setup: str
    seed: int
    metrics: list[IterationMetrics]
    seconds: float

    @property
    def final(self) -> MapTable:
        return self.metrics[-1].table

    def score(self, thresholds=(0.3, 0.5)) -> float:
        return float(np.mean([self.final.at(t) for t in thresholds]))


def setup_config(base: RunConfig, setup: str, seed: int) -> RunConfig:
    preset, _, mode = setup.partition("/")
    cfg = apply_preset(base, preset).replace(seed=seed)
    if mode:
        if not cfg.dual or cfg.sampling_mode == "none":
            raise ConfigError(f"setup {setup!r}: preset {preset} has no sampler to switch")
        cfg = cfg.replace(sampling_mode=mode)
    cfg.validate()
    return cfg


def run_ablation(dataset: Dataset, base: RunConfig, setups, seeds, log=None) -> list[AblationRun]:
    runs = []
    for setup in dict.fromkeys(setups):
        for seed in seeds:
            cfg = setup_config(base, setup, seed)
            t0 = time.perf_counter()
            _, metrics = run_training(dataset, cfg)
            runs.append(AblationRun(setup, seed, metrics, time.perf_counter() - t0))
            if log:
                log(f"{setup} seed={seed} mAP@0.5={runs[-1].final.at(0.5):.4f} ({runs[-1].seconds:.1f}s)")
    return runs


def mean_score(runs, setup: str, thresholds=(0.3, 0.5)) -> float:
    vals = [r.score(thresholds) for r in runs if r.setup == setup]
    if not vals:
        raise KeyError(setup)
    return float(np.mean(vals))


def mean_average(runs, setup: str, rng=(0.1, 0.7)) -> float:
    return float(np.mean([r.final.averages[tuple(rng)] for r in runs if r.setup == setup]))


def write_ablation_csv(path, runs: list[AblationRun]) -> None:
    """One row per (setup, seed) and a ``mean`` row per setup."""
    if not runs:
        raise ConfigError("no ablation runs to write")
    names = [n for n, _ in runs[0].final.rows()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setup", "seed", *names])
        for setup in dict.fromkeys(r.setup for r in runs):
            mine = [r for r in runs if r.setup == setup]
            for r in mine:
                w.writerow([setup, r.seed, *(f"{v:.6f}" for _, v in r.final.rows())])
            avg = np.mean([[v for _, v in r.final.rows()] for r in mine], axis=0)
            w.writerow([setup, "mean", *(f"{v:.6f}" for v in avg)])
