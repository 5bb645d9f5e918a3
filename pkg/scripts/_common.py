"""Shared argument handling for the experiment scripts."""
import argparse
import json
from pathlib import Path

from ams.config import RunConfig
from ams.synthgen import DatasetSpec, generate_dataset, read_dataset


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--dataset", help="dataset JSON; the default synthetic benchmark when omitted")
    p.add_argument("--config", help="RunConfig JSON applied before the script's own switches")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", default="results", help="output directory")
    return p


def load(args):
    dataset = read_dataset(args.dataset) if args.dataset else generate_dataset(DatasetSpec())
    cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return dataset, cfg, out
