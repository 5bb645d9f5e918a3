"""Synthetic feature sequences with planted action instances.

Each instance has a strongly discriminative core (prototype * core_gain) flanked
by weakly discriminative edges (prototype * flank_gain); background is noise.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError


@dataclass
class DatasetSpec:
    num_videos: int = 60
    T: int = 100
    D: int = 16
    C: int = 4
    modalities: int = 1
    instances_per_video: tuple[int, int] = (2, 4)
    instance_length: tuple[int, int] = (12, 24)
    core_fraction: float = 0.4
    core_gain: float = 3.0
    flank_gain: float = 1.0
    noise_sigma: float = 1.0
    multi_label_prob: float = 0.2
    train_fraction: float = 0.7
    seed: int = 0

    def validate(self) -> None:
        if min(self.num_videos, self.T, self.D, self.C) < 1:
            raise ValidationError("num_videos, T, D and C must be positive")
        if self.modalities not in (1, 2):
            raise ValidationError("modalities must be 1 or 2")
        lo, hi = self.instances_per_video
        if not 0 <= lo <= hi:
            raise ValidationError(f"bad instances_per_video range {self.instances_per_video}")
        lo, hi = self.instance_length
        if not 1 <= lo <= hi:
            raise ValidationError(f"bad instance_length range {self.instance_length}")
        if not 0 < self.core_fraction < 1:
            raise ValidationError("core_fraction must lie in (0, 1)")
        if not self.core_gain >= self.flank_gain > 0:
            raise ValidationError("need core_gain >= flank_gain > 0")
        if self.noise_sigma < 0 or not 0 <= self.multi_label_prob <= 1:
            raise ValidationError("noise_sigma must be >= 0 and multi_label_prob in [0, 1]")
        if not 0 < self.train_fraction <= 1:
            raise ValidationError("train_fraction must lie in (0, 1]")
        if self.instances_per_video[1] * (self.instance_length[0] + 1) - 1 > self.T:
            raise ValidationError(
                f"{self.instances_per_video[1]} instances of length >= {self.instance_length[0]} "
                f"cannot fit disjointly into T={self.T}"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown dataset spec keys: {sorted(unknown)}")
        spec = cls(**data)
        spec.instances_per_video = tuple(spec.instances_per_video)
        spec.instance_length = tuple(spec.instance_length)
        return spec


@dataclass
class Video:
    video_id: str
    modalities: list[np.ndarray]  # each (T, D)
    label: np.ndarray  # (C,) of 0/1
    gt: list[tuple[int, int, int]]  # (start, end, class), 1-based inclusive
    seconds_per_snippet: float | None = None

    @property
    def T(self) -> int:
        return self.modalities[0].shape[0]


@dataclass
class Dataset:
    spec: dict
    train: list[Video] = field(default_factory=list)
    test: list[Video] = field(default_factory=list)

    @property
    def videos(self) -> list[Video]:
        return self.train + self.test

    @property
    def dims(self) -> tuple[int, int, int]:
        v = self.videos[0]
        return v.T, v.modalities[0].shape[1], v.label.size


def class_prototypes(D: int, C: int, rng: np.random.Generator) -> np.ndarray:
    """(C, D) unit vectors; orthonormal whenever C <= D."""
    raw = rng.standard_normal((D, C))
    if C <= D:
        q, r = np.linalg.qr(raw)
        return (q * np.sign(np.diag(r))).T
    return (raw / np.linalg.norm(raw, axis=0)).T


def _place_intervals(n: int, lengths: np.ndarray, T: int, rng) -> list[tuple[int, int]]:
    # distribute free snippets over n+1 gaps, interior gaps at least one long
    free = T - lengths.sum() - (n - 1)
    cuts = np.sort(rng.integers(0, free + 1, size=n))
    gaps = np.diff(np.concatenate([[0], cuts]))
    out, pos = [], 0
    for i in range(n):
        pos += gaps[i] + (1 if i else 0)
        out.append((pos, pos + int(lengths[i])))  # 0-based half-open
        pos += int(lengths[i])
    return out


def _make_video(spec: DatasetSpec, protos: np.ndarray, rng: np.random.Generator, vid: str) -> Video:
    T, D, C = spec.T, spec.D, spec.C
    n = int(rng.integers(spec.instances_per_video[0], spec.instances_per_video[1] + 1))
    lengths = rng.integers(spec.instance_length[0], spec.instance_length[1] + 1, size=n)
    if n and lengths.sum() + n - 1 > T:
        raise ValidationError(f"cannot place {n} instances of total length {lengths.sum()} in T={T}")
    intervals = _place_intervals(n, lengths, T, rng) if n else []
    main = int(rng.integers(C))
    signal = np.zeros((T, D))
    gt = []
    for s, e in intervals:
        c = int(rng.integers(C)) if rng.random() < spec.multi_label_prob else main
        length = e - s
        core = min(length, max(1, int(round(spec.core_fraction * length))))
        core_start = s + (length - core) // 2
        signal[s:e] = protos[c] * spec.flank_gain
        signal[core_start : core_start + core] = protos[c] * spec.core_gain
        gt.append((int(s) + 1, int(e), c))
    label = np.zeros(C, dtype=int)
    for _, _, c in gt:
        label[c] = 1
    feats = [signal + spec.noise_sigma * rng.standard_normal((T, D)) for _ in range(spec.modalities)]
    return Video(vid, feats, label, gt)


def generate_dataset(spec: DatasetSpec) -> Dataset:
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    proto_seq, split_seq, *video_seqs = root.spawn(spec.num_videos + 2)
    protos = class_prototypes(spec.D, spec.C, np.random.default_rng(proto_seq))
    videos = [
        _make_video(spec, protos, np.random.default_rng(s), f"video_{i:04d}") for i, s in enumerate(video_seqs)
    ]
    order = np.random.default_rng(split_seq).permutation(len(videos))
    n_train = int(round(spec.train_fraction * len(videos)))
    return Dataset(
        spec=_spec_dict(spec),
        train=[videos[i] for i in sorted(order[:n_train])],
        test=[videos[i] for i in sorted(order[n_train:])],
    )


def _spec_dict(spec: DatasetSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["instances_per_video"] = list(spec.instances_per_video)
    d["instance_length"] = list(spec.instance_length)
    return d


def dataset_to_json(dataset: Dataset) -> dict:
    spec = dict(dataset.spec)
    spec["num_train"] = len(dataset.train)
    videos = []
    for v in dataset.videos:
        rec = {
            "id": v.video_id,
            "label": [int(b) for b in v.label],
            "gt": [[int(s), int(e), int(c)] for s, e, c in v.gt],
            "modalities": [m.tolist() for m in v.modalities],
        }
        if v.seconds_per_snippet is not None:
            rec["seconds_per_snippet"] = v.seconds_per_snippet
        videos.append(rec)
    return {"spec": spec, "videos": videos}


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    Path(path).write_text(json.dumps(dataset_to_json(dataset)))


def _parse_video(rec, where: str) -> Video:
    if not isinstance(rec, dict):
        raise DataError(f"{where}: expected an object")
    for key in ("id", "label", "gt", "modalities"):
        if key not in rec:
            raise DataError(f"{where}: missing field {key!r}")
    try:
        label = np.asarray(rec["label"], dtype=int)
    except (TypeError, ValueError):
        raise DataError(f"{where}.label: expected a list of 0/1") from None
    if label.ndim != 1 or not np.all((label == 0) | (label == 1)):
        raise DataError(f"{where}.label: expected a list of 0/1")
    mods = []
    for m, raw in enumerate(rec["modalities"]):
        try:
            arr = np.asarray(raw, dtype=float)
        except (TypeError, ValueError):
            raise DataError(f"{where}.modalities[{m}]: ragged or non-numeric rows") from None
        if arr.ndim != 2 or not np.all(np.isfinite(arr)):
            raise DataError(f"{where}.modalities[{m}]: expected a finite T x D matrix")
        mods.append(arr)
    if not mods or any(m.shape != mods[0].shape for m in mods):
        raise DataError(f"{where}.modalities: need >= 1 modality, all of one shape")
    T = mods[0].shape[0]
    gt = []
    for g, item in enumerate(rec["gt"]):
        if not (isinstance(item, list) and len(item) == 3 and all(isinstance(x, int) for x in item)):
            raise DataError(f"{where}.gt[{g}]: expected [start, end, class] integers")
        s, e, c = item
        if not (1 <= s <= e <= T and 0 <= c < label.size):
            raise DataError(f"{where}.gt[{g}]: interval or class out of range")
        gt.append((s, e, c))
    sps = rec.get("seconds_per_snippet")
    return Video(str(rec["id"]), mods, label, gt, None if sps is None else float(sps))


def dataset_from_json(data) -> Dataset:
    if not isinstance(data, dict) or "videos" not in data or not isinstance(data["videos"], list):
        raise DataError("top level must be an object with a 'videos' list")
    spec = data.get("spec", {})
    if not isinstance(spec, dict):
        raise DataError("'spec' must be an object")
    videos = [_parse_video(rec, f"videos[{i}]") for i, rec in enumerate(data["videos"])]
    if not videos:
        raise DataError("dataset has no videos")
    shape, C = videos[0].modalities[0].shape, videos[0].label.size
    for i, v in enumerate(videos):
        if v.modalities[0].shape != shape or v.label.size != C or len(v.modalities) != len(videos[0].modalities):
            raise DataError(f"videos[{i}]: shape differs from videos[0]")
    n_train = spec.get("num_train")
    if n_train is None:
        n_train = int(round(spec.get("train_fraction", 0.7) * len(videos)))
    if not isinstance(n_train, int) or not 0 <= n_train <= len(videos):
        raise DataError("spec.num_train out of range")
    spec = {k: v for k, v in spec.items() if k != "num_train"}
    return Dataset(spec, videos[:n_train], videos[n_train:])


def read_dataset(path: str | Path) -> Dataset:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return dataset_from_json(data)
