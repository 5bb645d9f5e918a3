"""Late fusion, proposal extraction and mAP at temporal-IoU thresholds.

Snippet indices in proposals and ground truth are 1-based and inclusive; IoU is
computed on the half-open intervals [start, end + 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .nn import topk_mean_aggregate


@dataclass(frozen=True)
class ActionProposal:
    start: int
    end: int
    category: int
    score: float
    video_id: str = ""


@dataclass(frozen=True)
class GroundTruthInstance:
    start: int
    end: int
    category: int
    video_id: str = ""


@dataclass
class ModalityOutput:
    cas_base: np.ndarray
    cas_supp: np.ndarray
    weight: float = 1.0


def fuse_cas(outputs: list[ModalityOutput]) -> np.ndarray:
    """Half the weighted sum of base + supplementary CAS over modalities."""
    if not outputs:
        raise ValidationError("need at least one modality")
    shape = outputs[0].cas_base.shape
    total = np.zeros(shape)
    for out in outputs:
        if out.cas_base.shape != shape or out.cas_supp.shape != shape:
            raise ValidationError("all CAS inputs must share one shape")
        total += out.weight * (out.cas_base + out.cas_supp)
    return 0.5 * total


def modality_weights(n: int, beta: float) -> list[float]:
    """Flow first at weight 1, RGB second at weight beta."""
    if n == 1:
        return [1.0]
    if n == 2:
        return [1.0, beta]
    raise ValidationError(f"unsupported modality count {n}")


def classify_video(final_cas: np.ndarray, k: int, theta_cls: float = 0.25) -> list[int]:
    probs = topk_mean_aggregate(final_cas, k)
    return [int(c) for c in np.flatnonzero(probs > theta_cls)]


def extract_proposals(
    final_cas: np.ndarray, classes, theta_loc: float, video_id: str = ""
) -> list[ActionProposal]:
    proposals = []
    for c in classes:
        above = final_cas[:, c] > theta_loc
        edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)  # exclusive, 0-based
        for s, e in zip(starts, ends):
            score = float(final_cas[s:e, c].max())
            proposals.append(ActionProposal(int(s) + 1, int(e), int(c), score, video_id))
    proposals.sort(key=lambda p: -p.score)
    return proposals


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """IoU of half-open intervals (start, stop)."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def _half_open(x) -> tuple[int, int]:
    return (x.start, x.end + 1)


def average_precision(proposals, gts, iou_threshold: float) -> float | None:
    """AP for one class with greedy one-to-one matching in descending score order.

    Returns None when there is neither ground truth nor a proposal.
    """
    if not gts:
        return None if not proposals else 0.0
    ranked = sorted(proposals, key=lambda p: -p.score)
    matched = [False] * len(gts)
    tp = np.zeros(len(ranked))
    for i, p in enumerate(ranked):
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if matched[j] or g.video_id != p.video_id or g.category != p.category:
                continue
            iou = tiou(_half_open(p), _half_open(g))
            if iou >= iou_threshold and iou > best_iou:
                best, best_iou = j, iou
        if best >= 0:
            matched[best] = True
            tp[i] = 1
    if not ranked:
        return 0.0
    precision = np.cumsum(tp) / np.arange(1, len(ranked) + 1)
    return float(np.sum(tp * precision) / len(gts))


@dataclass
class MapTable:
    thresholds: list[float]
    maps: list[float]
    averages: dict[tuple[float, float], float] = field(default_factory=dict)

    def at(self, threshold: float) -> float:
        for t, v in zip(self.thresholds, self.maps):
            if np.isclose(t, threshold):
                return v
        raise KeyError(threshold)

    def rows(self) -> list[tuple[str, float]]:
        out = [(f"{t:g}", v) for t, v in zip(self.thresholds, self.maps)]
        out += [(f"AVG({lo:g}-{hi:g})", v) for (lo, hi), v in self.averages.items()]
        return out


def map_table(predictions: dict, ground_truth: dict, iou_thresholds, ranges=()) -> MapTable:
    """mAP per threshold over classes present in the ground truth.

    ``predictions`` and ``ground_truth`` map video id to lists of proposals / GT
    instances; video ids on the items are overwritten by the dict key.
    """
    if not len(iou_thresholds):
        raise ValidationError("need at least one IoU threshold")
    props, gts = {}, {}
    for vid, items in predictions.items():
        for p in items:
            props.setdefault(p.category, []).append(
                ActionProposal(p.start, p.end, p.category, p.score, str(vid))
            )
    for vid, items in ground_truth.items():
        for g in items:
            gts.setdefault(g.category, []).append(GroundTruthInstance(g.start, g.end, g.category, str(vid)))
    classes = sorted(gts)
    maps = []
    for thr in iou_thresholds:
        aps = [average_precision(props.get(c, []), gts[c], thr) for c in classes]
        maps.append(float(np.mean(aps)) if aps else 0.0)
    averages = {}
    for lo, hi in ranges:
        vals = [m for t, m in zip(iou_thresholds, maps) if lo - 1e-9 <= t <= hi + 1e-9]
        if vals:
            averages[(lo, hi)] = float(np.mean(vals))
    return MapTable(list(iou_thresholds), maps, averages)
