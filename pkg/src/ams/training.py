"""Alternating two-branch training with mutual location pseudo-labels.

Phase zero trains the base branch on video labels only. Each iteration then
runs phase one (base frozen, supplementary branch trained on sampler output)
and phase two (supplementary frozen, base trained), regenerating pseudo-labels
from the branch that was just trained.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import infer
from .config import RunConfig
from .errors import ConfigError, DataError, NumericError, ValidationError
from .infer import ModalityOutput
from .nn import AdamState, BranchParams, PARAM_NAMES, adam_update, backbone_backward, backbone_forward, init_params
from .sampler import SamplerState, run_sampler, temporal_align, timestamps_to_snippets
from .supervision import adaptive_threshold, classification_loss, localization_loss, make_pseudo_labels
from .synthgen import Dataset, Video

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PHASE_CODES = {"zero": 0, "one": 1, "two": 2}


@dataclass
class TrainingState:
    base: BranchParams
    supp: BranchParams
    base_adam: AdamState
    supp_adam: AdamState
    modality: int = 0
    # base-generated labels in self mode, the shared track in mutual mode
    pseudo_labels: list = field(default_factory=list)
    # the supplementary branch's own track, self mode only
    supp_pseudo_labels: list | None = None
    phase: str = "zero"
    iteration: int = 0
    epoch: int = 0
    loss_history: list = field(default_factory=list)  # (epoch, phase, basic, local, total)

    def copy(self) -> "TrainingState":
        return copy.deepcopy(self)


def resolve_dims(cfg: RunConfig, dataset: Dataset) -> RunConfig:
    T, D, C = dataset.dims
    for name, actual in (("T", T), ("D", D), ("C", C)):
        wanted = getattr(cfg, name)
        if wanted and wanted != actual:
            raise ConfigError(f"config {name}={wanted} but dataset has {name}={actual}")
    return cfg.replace(T=T, D=D, C=C)


def _rng(cfg: RunConfig, *stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, *stream])


def init_state(cfg: RunConfig, modality: int = 0) -> TrainingState:
    base = init_params(cfg.D, cfg.hidden_dim, cfg.C, _rng(cfg, modality, 100))
    supp = init_params(cfg.D, cfg.hidden_dim, cfg.C, _rng(cfg, modality, 101))
    return TrainingState(base, supp, AdamState.zeros(base), AdamState.zeros(supp), modality)


# ---------------------------------------------------------------- forward helpers


def branch_cas(params: BranchParams, features: np.ndarray, cfg: RunConfig) -> np.ndarray:
    cas, _ = backbone_forward(features, params, None, cfg.dropout_rate, cfg.topk(features.shape[0]))
    return cas


def sample_supp_inputs(features, cas_base, label, cfg: RunConfig, rng, strategy=None):
    """(features for the supplementary branch, timestamps or None)."""
    if cfg.sampling_mode == "none":
        return features, None
    state = run_sampler(
        features,
        cas_base,
        label,
        eta=cfg.eta_sampling,
        H=cfg.interp_factor,
        weight_mode=cfg.sampling_mode,
        aggregation_mode=cfg.aggregation_mode,
        strategy=strategy or cfg.sample_strategy,
        theta_loc_factor=cfg.theta_loc_factor,
        rng=rng,
    )
    return state.features, state.timestamps


def supp_aligned_cas(state: TrainingState, features, cas_base, label, cfg: RunConfig, rng) -> np.ndarray:
    inputs, K = sample_supp_inputs(features, cas_base, label, cfg, rng, strategy="deterministic")
    raw = branch_cas(state.supp, inputs, cfg)
    if K is None:
        return raw
    return temporal_align(raw, K, cfg.interp_factor, features.shape[0])


def predicted_label(cas: np.ndarray, cfg: RunConfig) -> np.ndarray:
    """Classes the base branch believes present; the argmax class if none pass."""
    probs = infer.topk_mean_aggregate(cas, cfg.topk(cas.shape[0]))
    label = (probs > cfg.theta_cls).astype(int)
    if not label.any():
        label[int(np.argmax(probs))] = 1
    return label


# ---------------------------------------------------------------- optimisation


def _check_labels(videos: list[Video]) -> None:
    if not videos:
        raise ValidationError("training set is empty")
    for v in videos:
        if not np.any(v.label):
            raise ValidationError(f"video {v.video_id} has no positive label; cannot train on it")


def _sgd_step(params, adam, features, label, pseudo, lam, cfg, rng):
    T = features.shape[0]
    k = cfg.topk(T)
    mask = None
    if cfg.dropout_rate > 0:
        mask = (rng.random((T, cfg.hidden_dim)) >= cfg.dropout_rate).astype(float)
    cas, probs = backbone_forward(features, params, mask, cfg.dropout_rate, k)
    basic, g_probs = classification_loss(probs, label)
    local, g_cas = 0.0, np.zeros_like(cas)
    if pseudo is not None and lam != 0:
        local, g_cas = localization_loss(cas, pseudo)
        g_cas = lam * g_cas
    total = basic + lam * local
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss (basic={basic}, local={local})")
    grads = backbone_backward(features, params, mask, g_cas, cfg.dropout_rate, grad_probs=g_probs, k=k)
    params, adam = adam_update(params, grads, adam, cfg.learning_rate)
    return params, adam, (basic, local, total)


def _train_branch(state, which, epochs, make_batch, videos, lam, cfg, rng):
    """Run ``epochs`` passes of per-video Adam steps on one branch.

    ``make_batch(i, rng)`` returns (features, pseudo-label mask or None) for video i.
    """
    params = getattr(state, which)
    adam = getattr(state, f"{which}_adam")
    for _ in range(epochs):
        sums = np.zeros(3)
        for i in rng.permutation(len(videos)):
            features, pseudo = make_batch(i, rng)
            params, adam, losses = _sgd_step(params, adam, features, videos[i].label, pseudo, lam, cfg, rng)
            sums += losses
        state.epoch += 1
        state.loss_history.append((state.epoch, state.phase, *(sums / len(videos))))
    setattr(state, which, params)
    setattr(state, f"{which}_adam", adam)


def _base_labels(state, videos, cfg):
    out = []
    for v in videos:
        cas = branch_cas(state.base, v.modalities[state.modality], cfg)
        out.append(make_pseudo_labels(cas, v.label, adaptive_threshold(cas, cfg.theta_loc_factor)))
    return out


def _supp_labels(state, videos, base_cas, cfg, rng):
    out = []
    for v, cb in zip(videos, base_cas):
        cas = supp_aligned_cas(state, v.modalities[state.modality], cb, v.label, cfg, rng)
        out.append(make_pseudo_labels(cas, v.label, adaptive_threshold(cas, cfg.theta_loc_factor)))
    return out


def train_phase0(dataset: Dataset, cfg: RunConfig, modality: int = 0) -> TrainingState:
    cfg = resolve_dims(cfg, dataset)
    videos = dataset.train
    _check_labels(videos)
    state = init_state(cfg, modality)
    state.phase = "zero"
    rng = _rng(cfg, modality, 0, 0)
    _train_branch(
        state, "base", cfg.phase0_epochs, lambda i, r: (videos[i].modalities[modality], None), videos, 0.0, cfg, rng
    )
    state.pseudo_labels = _base_labels(state, videos, cfg)
    if cfg.supervision_mode == "self":
        state.supp_pseudo_labels = [p.copy() for p in state.pseudo_labels]
    return state


def train_phase_one(state, dataset, cfg, lam=None, epochs=None) -> TrainingState:
    """Freeze the base branch, train the supplementary branch on sampled inputs."""
    cfg = resolve_dims(cfg, dataset)
    videos = dataset.train
    m = state.modality
    lam = cfg.lambda_balance if lam is None else lam
    epochs = cfg.phase_epochs if epochs is None else epochs
    state.phase = "one"
    rng = _rng(cfg, m, state.iteration + 1, 1)
    base_cas = [branch_cas(state.base, v.modalities[m], cfg) for v in videos]
    track = state.supp_pseudo_labels if cfg.supervision_mode == "self" else state.pseudo_labels

    def batch(i, r):
        feats, K = sample_supp_inputs(videos[i].modalities[m], base_cas[i], videos[i].label, cfg, r)
        if lam == 0 or not track:
            return feats, None
        labels = track[i]
        return feats, labels if K is None else labels[timestamps_to_snippets(K, cfg.interp_factor, cfg.T)]

    _train_branch(state, "supp", epochs, batch, videos, lam, cfg, rng)
    fresh = _supp_labels(state, videos, base_cas, cfg, _rng(cfg, m, state.iteration + 1, 11))
    if cfg.supervision_mode == "self":
        state.supp_pseudo_labels = fresh
    else:
        state.pseudo_labels = fresh
    return state


def train_phase_two(state, dataset, cfg, lam=None, epochs=None) -> TrainingState:
    """Freeze the supplementary branch, train the base branch on original inputs."""
    cfg = resolve_dims(cfg, dataset)
    videos = dataset.train
    m = state.modality
    lam = cfg.lambda_balance if lam is None else lam
    epochs = cfg.phase_epochs if epochs is None else epochs
    state.phase = "two"
    rng = _rng(cfg, m, state.iteration + 1, 2)
    track = state.pseudo_labels

    def batch(i, r):
        return videos[i].modalities[m], (track[i] if lam != 0 and track else None)

    _train_branch(state, "base", epochs, batch, videos, lam, cfg, rng)
    state.pseudo_labels = _base_labels(state, videos, cfg)
    return state


def train_iteration(state: TrainingState, dataset: Dataset, cfg: RunConfig, supervision_mode=None) -> TrainingState:
    if supervision_mode is not None:
        cfg = cfg.replace(supervision_mode=supervision_mode)
    if cfg.supervision_mode == "self" and state.supp_pseudo_labels is None:
        state.supp_pseudo_labels = [p.copy() for p in state.pseudo_labels]
    if cfg.dual:
        train_phase_one(state, dataset, cfg)
    train_phase_two(state, dataset, cfg)
    state.iteration += 1
    return state


# ---------------------------------------------------------------- prediction


@dataclass
class BranchTrace:
    cas_base: np.ndarray
    cas_supp: np.ndarray  # aligned to the uniform grid
    sampler: SamplerState | None  # None when the supplementary input is not resampled


def video_stream(video_id: str) -> int:
    """Stable per-video rng stream id, independent of list position."""
    return zlib.crc32(video_id.encode())


class Model:
    """Trained branches for every modality plus the config they were trained with."""

    def __init__(self, cfg: RunConfig, states: list[TrainingState], base_only: bool = False):
        self.cfg = cfg
        self.states = states
        self.base_only = base_only

    def trace(self, video: Video, state: TrainingState) -> BranchTrace:
        cfg = self.cfg
        feats = video.modalities[state.modality]
        cas_base = branch_cas(state.base, feats, cfg)
        if self.base_only or not cfg.dual:
            return BranchTrace(cas_base, cas_base, None)
        if cfg.sampling_mode == "none":
            return BranchTrace(cas_base, branch_cas(state.supp, feats, cfg), None)
        label = predicted_label(cas_base, cfg)
        rng = _rng(cfg, state.modality, 9999, video_stream(video.video_id))
        sampled = run_sampler(
            feats,
            cas_base,
            label,
            eta=cfg.eta_sampling,
            H=cfg.interp_factor,
            weight_mode=cfg.sampling_mode,
            aggregation_mode=cfg.aggregation_mode,
            strategy="deterministic",
            theta_loc_factor=cfg.theta_loc_factor,
            rng=rng,
        )
        raw = branch_cas(state.supp, sampled.features, cfg)
        aligned = temporal_align(raw, sampled.timestamps, cfg.interp_factor, feats.shape[0])
        return BranchTrace(cas_base, aligned, sampled)

    def outputs(self, video: Video) -> list[ModalityOutput]:
        weights = infer.modality_weights(len(self.states), self.cfg.beta_fusion)
        outs = []
        for state, w in zip(self.states, weights):
            t = self.trace(video, state)
            outs.append(ModalityOutput(t.cas_base, t.cas_supp, w))
        return outs


class OracleModel:
    """Emits the ground-truth indicator as CAS; for evaluation plumbing tests."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    def outputs(self, video: Video) -> list[ModalityOutput]:
        ind = np.zeros((video.T, video.label.size))
        for s, e, c in video.gt:
            ind[s - 1 : e, c] = 1.0
        return [ModalityOutput(ind, ind, 1.0)]


def localize(final_cas: np.ndarray, cfg: RunConfig, video_id: str = "") -> list[infer.ActionProposal]:
    classes = infer.classify_video(final_cas, cfg.topk(final_cas.shape[0]), cfg.theta_cls)
    theta_loc = adaptive_threshold(final_cas, cfg.theta_loc_factor)
    return infer.extract_proposals(final_cas, classes, theta_loc, video_id)


def predict(model, videos: list[Video]) -> dict:
    return {
        v.video_id: localize(infer.fuse_cas(model.outputs(v)), model.cfg, v.video_id) for v in videos
    }


def ground_truth(videos: list[Video]) -> dict:
    return {v.video_id: [infer.GroundTruthInstance(s, e, c, v.video_id) for s, e, c in v.gt] for v in videos}


def evaluate(model, videos: list[Video], thresholds=None, ranges=None) -> infer.MapTable:
    cfg = model.cfg
    thresholds = cfg.iou_thresholds if thresholds is None else thresholds
    ranges = [tuple(r) for r in (cfg.report_ranges if ranges is None else ranges)]
    return infer.map_table(predict(model, videos), ground_truth(videos), thresholds, ranges)


# ---------------------------------------------------------------- orchestration


@dataclass
class IterationMetrics:
    iteration: int
    table: infer.MapTable


def run_training(dataset: Dataset, cfg: RunConfig) -> tuple[list[TrainingState], list[IterationMetrics]]:
    """Phase zero then ``num_iterations`` alternating iterations, for each modality.

    Without location supervision a dual model runs one single iteration whose
    phase one trains the supplementary branch as long as phase zero trained the
    base, with no phase two. Iteration 0 is scored on the base branch alone.
    """
    cfg = resolve_dims(cfg, dataset)
    cfg.validate()
    n_mod = len(dataset.videos[0].modalities)
    evaluate_on = dataset.test if any(v.gt for v in dataset.test) else []
    metrics = []

    def score(states, iteration, base_only=False):
        if evaluate_on:
            metrics.append(IterationMetrics(iteration, evaluate(Model(cfg, states, base_only), evaluate_on)))

    states = [train_phase0(dataset, cfg, m) for m in range(n_mod)]
    score(states, 0, base_only=True)
    if cfg.supervision_mode == "none":
        if cfg.dual and cfg.num_iterations > 0:
            for st in states:
                train_phase_one(st, dataset, cfg, lam=0.0, epochs=cfg.phase0_epochs)
                st.iteration = 1
            score(states, 1)
        return states, metrics
    for it in range(1, cfg.num_iterations + 1):
        for st in states:
            train_iteration(st, dataset, cfg)
        score(states, it)
    return states, metrics


def final_model(cfg: RunConfig, states: list[TrainingState]) -> Model:
    return Model(cfg, states, base_only=cfg.dual and all(s.iteration == 0 for s in states))


# ---------------------------------------------------------------- files


def _params_json(p: BranchParams) -> dict:
    return {name: getattr(p, name).tolist() for name in PARAM_NAMES}


def _params_from(d: dict, where: str) -> BranchParams:
    try:
        p = BranchParams(**{name: np.asarray(d[name], dtype=float) for name in PARAM_NAMES})
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: bad parameter block ({exc})") from None
    p.validate()
    return p


def save_checkpoint(path, cfg: RunConfig, states: list[TrainingState]) -> None:
    mods = []
    for s in states:
        mods.append(
            {
                "modality": s.modality,
                "phase": s.phase,
                "iteration": s.iteration,
                "epoch": s.epoch,
                "base": _params_json(s.base),
                "supp": _params_json(s.supp),
                "base_adam": {
                    "first_moment": _params_json(s.base_adam.first_moment),
                    "second_moment": _params_json(s.base_adam.second_moment),
                    "step_count": s.base_adam.step_count,
                },
                "supp_adam": {
                    "first_moment": _params_json(s.supp_adam.first_moment),
                    "second_moment": _params_json(s.supp_adam.second_moment),
                    "step_count": s.supp_adam.step_count,
                },
            }
        )
    doc = {"version": CHECKPOINT_VERSION, "kind": "model", "config": cfg.to_dict(), "modalities": mods}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Returns a ``Model`` (or ``OracleModel`` for ``"kind": "oracle"`` files)."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version') if isinstance(doc, dict) else None}")
    cfg = RunConfig.from_dict(doc.get("config", {}))
    if doc.get("kind") == "oracle":
        return OracleModel(cfg)
    states = []
    for i, rec in enumerate(doc.get("modalities", [])):
        where = f"modalities[{i}]"
        try:
            base = _params_from(rec["base"], f"{where}.base")
            supp = _params_from(rec["supp"], f"{where}.supp")
            adams = []
            for key in ("base_adam", "supp_adam"):
                a = rec[key]
                adams.append(
                    AdamState(
                        _params_from(a["first_moment"], f"{where}.{key}"),
                        _params_from(a["second_moment"], f"{where}.{key}"),
                        int(a["step_count"]),
                    )
                )
            st = TrainingState(base, supp, adams[0], adams[1], int(rec["modality"]))
            st.phase, st.iteration, st.epoch = rec["phase"], int(rec["iteration"]), int(rec["epoch"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: {where}: missing or malformed field {exc}") from None
        states.append(st)
    if not states:
        raise DataError(f"{path}: checkpoint holds no modalities")
    return final_model(cfg, states)


def write_loss_history(path, states: list[TrainingState]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["modality", "epoch", "phase", "L_basic", "L_local", "L_total"])
        for s in states:
            for epoch, phase, basic, local, total in s.loss_history:
                w.writerow([s.modality, epoch, phase, repr(float(basic)), repr(float(local)), repr(float(total))])


def write_metrics(path, metrics: list[IterationMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "iou_threshold", "mAP"])
        for m in metrics:
            for name, value in m.table.rows():
                w.writerow([m.iteration, name, f"{value:.6f}"])
