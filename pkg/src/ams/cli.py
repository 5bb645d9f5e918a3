"""Command-line entry point: ``ams generate | train | eval | ablate | dump-cas``.

Failures print one line ``error[<tag>]: <message>`` to stderr and exit with
2 (config), 3 (data) or 4 (numeric). ``AMS_OUTPUT_DIR`` sets the default
output directory.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import ablation, infer, training
from .config import RunConfig, apply_preset, coerce, load_config
from .errors import AmsError, ConfigError, DataError
from .synthgen import DatasetSpec, generate_dataset, read_dataset, write_dataset

log = logging.getLogger("ams")

OVERRIDABLE = [f for f in dataclasses.fields(RunConfig) if f.type in ("int", "float", "str") and f.name != "out_dir"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one machine-parsable line instead of usage text
        raise ConfigError(message)


def default_out_dir() -> Path:
    return Path(os.environ.get("AMS_OUTPUT_DIR") or "ams_out")


def _out_dir(arg: str | None, cfg: RunConfig | None = None) -> Path:
    out = Path(arg) if arg else Path(cfg.out_dir) if cfg and cfg.out_dir else default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_json(path: str, what: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def resolve_config(args) -> RunConfig:
    """Config file, then ``--preset``, then individual ``--key value`` overrides."""
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.preset:
        cfg = apply_preset(cfg, args.preset)
    changes = {f.name: getattr(args, f.name) for f in OVERRIDABLE if getattr(args, f.name) is not None}
    cfg = coerce(cfg.replace(**changes))
    cfg.validate()
    return cfg


def _load_dataset(path: str):
    if not path:
        raise ConfigError("no dataset given (use --dataset or the config's 'dataset' key)")
    return read_dataset(path)


def _eval_videos(dataset, split: str):
    videos = {"train": dataset.train, "test": dataset.test, "all": dataset.videos}[split]
    if not videos:
        raise DataError(f"dataset has no videos in split {split!r}")
    return videos


# ---------------------------------------------------------------- verbs


def cmd_generate(args) -> int:
    data = _read_json(args.spec, "dataset spec") if args.spec else {}
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        dataset = generate_dataset(DatasetSpec.from_dict(data))
    except TypeError as exc:
        raise ConfigError(f"bad dataset spec: {exc}") from None
    out = Path(args.out) if args.out else _out_dir(None) / "dataset.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out)
    print(out)
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    dataset = _load_dataset(cfg.dataset)
    out = _out_dir(args.out_dir, cfg)
    states, metrics = training.run_training(dataset, cfg)
    cfg = training.resolve_dims(cfg, dataset)
    training.save_checkpoint(out / "checkpoint.json", cfg, states)
    training.write_loss_history(out / "loss_history.csv", states)
    training.write_metrics(out / "metrics.csv", metrics)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    for m in metrics:
        log.info("iteration %d mAP@0.5=%.4f", m.iteration, m.table.at(0.5) if 0.5 in m.table.thresholds else m.table.maps[-1])
    print(out)
    return 0


def _parse_thresholds(text: str | None):
    if text is None:
        return None
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad --thresholds {text!r}; expected comma-separated numbers") from None
    if not vals:
        raise ConfigError("--thresholds is empty")
    return vals


def write_proposals(path, predictions: dict, videos) -> None:
    scale = {v.video_id: v.seconds_per_snippet for v in videos}
    with open(path, "w") as fh:
        for vid, props in predictions.items():
            for p in props:
                rec = {"video_id": vid, "start": p.start, "end": p.end, "class": p.category, "score": p.score}
                if scale.get(vid):
                    rec["start_s"] = (p.start - 1) * scale[vid]
                    rec["end_s"] = p.end * scale[vid]
                fh.write(json.dumps(rec) + "\n")


def write_table(path, table: infer.MapTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iou_threshold", "mAP"])
        for name, value in table.rows():
            w.writerow([name, f"{value:.6f}"])


def cmd_eval(args) -> int:
    model = training.load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    videos = _eval_videos(dataset, args.split)
    thresholds = _parse_thresholds(args.thresholds) or model.cfg.iou_thresholds
    ranges = [tuple(r) for r in model.cfg.report_ranges]
    predictions = training.predict(model, videos)
    table = infer.map_table(predictions, training.ground_truth(videos), thresholds, ranges)
    out = _out_dir(args.out_dir)
    write_proposals(out / "proposals.jsonl", predictions, videos)
    write_table(out / "eval_metrics.csv", table)
    for name, value in table.rows():
        print(f"{name}\t{value:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    dataset = _load_dataset(cfg.dataset)
    setups = [s for s in args.setups.split(",") if s]
    runs = ablation.run_ablation(dataset, cfg, setups, range(args.seeds), log=log.info)
    out = _out_dir(args.out_dir, cfg)
    ablation.write_ablation_csv(out / "ablation.csv", runs)
    for setup in dict.fromkeys(r.setup for r in runs):
        print(f"{setup}\t{ablation.mean_score(runs, setup):.4f}")
    print(out / "ablation.csv")
    return 0


def cmd_dump_cas(args) -> int:
    model = training.load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    matches = [v for v in dataset.videos if v.video_id == args.video_id]
    if not matches:
        raise DataError(f"video {args.video_id!r} not in {args.dataset}")
    video = matches[0]
    if isinstance(model, training.OracleModel):
        outs = model.outputs(video)
        trace = training.BranchTrace(outs[0].cas_base, outs[0].cas_supp, None)
    else:
        if not 0 <= args.modality < len(model.states):
            raise ConfigError(f"--modality {args.modality} out of range")
        trace = model.trace(video, model.states[args.modality])
        outs = model.outputs(video)
    final = infer.fuse_cas(outs)
    out = _out_dir(args.out_dir)
    stem = f"cas_{video.video_id}"
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snippet", "class", "base", "supp_aligned", "final"])
        for t in range(video.T):
            for c in range(final.shape[1]):
                w.writerow([t + 1, c, repr(float(trace.cas_base[t, c])), repr(float(trace.cas_supp[t, c])), repr(float(final[t, c]))])
    if trace.sampler is not None:
        s = trace.sampler
        with open(out / f"{stem}_sampler.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["snippet", "m", "w", "K"])
            for t in range(video.T):
                w.writerow([t + 1, repr(float(s.aggregated[t])), repr(float(s.weights[t])), int(s.timestamps[t])])
    print(out / f"{stem}.csv")
    return 0


# ---------------------------------------------------------------- parser


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="JSON config file")
    p.add_argument("--preset", choices=sorted("ABCDEF"), help="component setup A..F")
    p.add_argument("--out-dir", dest="out_dir_arg", help="output directory")
    group = p.add_argument_group("config overrides")
    for f in OVERRIDABLE:
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        group.add_argument(*flags, dest=f.name, default=None, metavar=f.type.upper())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = _Parser(prog="ams", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("spec", nargs="?", help="JSON dataset spec (defaults when omitted)")
    p.add_argument("--out", help="output dataset path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train and write checkpoint, loss history and metrics")
    _add_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--thresholds", help="comma-separated IoU thresholds")
    p.add_argument("--split", choices=["test", "train", "all"], default="test")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run component and weight-mode setups over seeds")
    _add_overrides(p)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument(
        "--setups",
        default=",".join(dict.fromkeys(ablation.COMPONENT_SETUPS + ablation.WEIGHT_SETUPS)),
        help="comma-separated setup names, e.g. A,B,F,F/random",
    )
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-cas", help="write per-branch and fused CAS of one video")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("video_id")
    p.add_argument("--modality", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_dump_cas)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if hasattr(args, "out_dir_arg"):
            args.out_dir = args.out_dir_arg
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except AmsError as exc:
        print(f"error[{exc.tag}]: {' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[data]: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
