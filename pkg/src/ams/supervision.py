"""Location pseudo-labels and the classification / localization losses.

Every loss returns ``(value, gradient)`` with the gradient taken w.r.t. its
probability input, so it can be fed straight into ``nn.backbone_backward``.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError

CLIP = 1e-7


def adaptive_threshold(cas: np.ndarray, factor: float = 0.7) -> float:
    return float(factor * np.mean(cas))


def make_pseudo_labels(cas: np.ndarray, label: np.ndarray, alpha: float) -> np.ndarray:
    """Binary (T, C) mask: 1 where cas > alpha on a class present in the video."""
    gate = np.asarray(label).reshape(1, -1) == 1
    return ((np.asarray(cas) > alpha) & gate).astype(np.int8)


def _clip(p):
    p = np.asarray(p, dtype=float)
    inside = (p >= CLIP) & (p <= 1 - CLIP)
    return np.clip(p, CLIP, 1 - CLIP), inside


def localization_loss(cas: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Per-class BCE with positive and negative snippets averaged separately.

    An empty positive or negative set drops its half; class terms are averaged.
    """
    cas = np.asarray(cas, dtype=float)
    mask = np.asarray(mask)
    if cas.shape != mask.shape:
        raise DimensionError(f"cas {cas.shape} and mask {mask.shape} differ")
    p, inside = _clip(cas)
    C = cas.shape[1]
    pos = mask == 1
    neg = ~pos
    n_pos = pos.sum(axis=0)
    n_neg = neg.sum(axis=0)
    w_pos = np.divide(1.0, n_pos, out=np.zeros(C), where=n_pos > 0)
    w_neg = np.divide(1.0, n_neg, out=np.zeros(C), where=n_neg > 0)
    loss = (np.sum(-np.log(p) * pos * w_pos) + np.sum(-np.log1p(-p) * neg * w_neg)) / C
    grad = (pos * w_pos * (-1.0 / p) + neg * w_neg / (1.0 - p)) * inside / C
    return float(loss), grad


def classification_loss(category_probs: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray]:
    y = np.asarray(label, dtype=float)
    p, inside = _clip(category_probs)
    if p.shape != y.shape:
        raise DimensionError(f"probs {p.shape} and label {y.shape} differ")
    C = y.size
    loss = -np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)) / C
    grad = (-y / p + (1 - y) / (1 - p)) * inside / C
    return float(loss), grad


def total_loss(basic: float, local: float, lam: float = 1.0) -> float:
    return basic + lam * local
