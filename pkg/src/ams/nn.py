"""Two-layer MLP backbone producing a class activation sequence, with manual
backprop, Adam and a finite-difference gradient checker.

Shapes: features (T, D), hidden (T, H), cas (T, C).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractViolation, DimensionError, NumericError, ValidationError

PARAM_NAMES = ("transform_weights", "transform_bias", "cas_weights", "cas_bias")


@dataclass
class BranchParams:
    transform_weights: np.ndarray  # (D, H)
    transform_bias: np.ndarray  # (H,)
    cas_weights: np.ndarray  # (H, C)
    cas_bias: np.ndarray  # (C,)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "BranchParams":
        return BranchParams(**{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self) -> "BranchParams":
        return BranchParams(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    @property
    def dims(self) -> tuple[int, int, int]:
        D, H = self.transform_weights.shape
        return D, H, self.cas_weights.shape[1]

    def validate(self) -> None:
        D, H, C = self.dims
        expected = {
            "transform_weights": (D, H),
            "transform_bias": (H,),
            "cas_weights": (H, C),
            "cas_bias": (C,),
        }
        for name, arr in self.arrays().items():
            if arr.shape != expected[name]:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")

    def equals(self, other: "BranchParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))


def init_params(D: int, H: int, C: int, rng: np.random.Generator) -> BranchParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike."""
    b1 = 1.0 / np.sqrt(D)
    b2 = 1.0 / np.sqrt(H)
    return BranchParams(
        transform_weights=rng.uniform(-b1, b1, size=(D, H)),
        transform_bias=rng.uniform(-b1, b1, size=H),
        cas_weights=rng.uniform(-b2, b2, size=(H, C)),
        cas_bias=rng.uniform(-b2, b2, size=C),
    )


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def topk_indices(cas: np.ndarray, k: int) -> np.ndarray:
    """(k, C) row indices of the k largest entries per channel; ties go to the earlier row."""
    T = cas.shape[0]
    if not 1 <= k <= T:
        raise ValidationError(f"top-k size {k} outside [1, {T}]")
    order = np.argsort(-cas, axis=0, kind="stable")
    return order[:k]


def topk_mean_aggregate(cas: np.ndarray, k: int) -> np.ndarray:
    cas = np.asarray(cas, dtype=float)
    if cas.ndim == 1:
        cas = cas[:, None]
    idx = topk_indices(cas, k)
    return np.take_along_axis(cas, idx, axis=0).mean(axis=0)


def topk_mean_backward(cas: np.ndarray, k: int, grad_probs: np.ndarray) -> np.ndarray:
    """Route d(loss)/d(probs) back onto the k selected entries of each channel."""
    idx = topk_indices(cas, k)
    grad = np.zeros_like(cas)
    np.put_along_axis(grad, idx, np.broadcast_to(grad_probs / k, idx.shape), axis=0)
    return grad


def _check_inputs(features, params, dropout_mask):
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise DimensionError(f"features must be 2-D (T, D), got shape {features.shape}")
    D, H, _ = params.dims
    if features.shape[1] != D:
        raise DimensionError(f"feature dim {features.shape[1]} != transform input dim {D}")
    if not np.all(np.isfinite(features)):
        raise ValidationError("features contain non-finite values")
    if dropout_mask is not None:
        mask = np.asarray(dropout_mask)
        try:
            np.broadcast_to(mask, (features.shape[0], H))
        except ValueError:
            raise ContractViolation(
                f"dropout mask of shape {mask.shape} does not fit hidden layer ({features.shape[0]}, {H})"
            ) from None
        if not np.all((mask == 0) | (mask == 1)):
            raise ContractViolation("dropout mask must be binary")
    return features


def _forward(features, params, dropout_mask, dropout_rate):
    with np.errstate(over="ignore", invalid="ignore"):
        pre = features @ params.transform_weights + params.transform_bias
        active = pre > 0
        hidden = np.where(active, pre, 0.0)
        scale = None
        if dropout_mask is not None:
            scale = np.asarray(dropout_mask, dtype=float) / (1.0 - dropout_rate)
            hidden = hidden * scale
        logits = hidden @ params.cas_weights + params.cas_bias
    if not np.all(np.isfinite(logits)):
        # sigmoid would quietly saturate; diverged weights must not pass as a CAS
        raise NumericError("backbone logits overflowed; parameters have diverged")
    return active, scale, hidden, sigmoid(logits)


def backbone_forward(
    features: np.ndarray,
    params: BranchParams,
    dropout_mask: np.ndarray | None = None,
    dropout_rate: float = 0.5,
    k: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (cas, category_probs). Pass a dropout mask only in training mode.

    k defaults to the whole sequence (plain temporal mean).
    """
    features = _check_inputs(features, params, dropout_mask)
    _, _, _, cas = _forward(features, params, dropout_mask, dropout_rate)
    k = features.shape[0] if k is None else k
    return cas, topk_mean_aggregate(cas, k)


def backbone_backward(
    features: np.ndarray,
    params: BranchParams,
    dropout_mask: np.ndarray | None,
    loss_grads_wrt_cas: np.ndarray,
    dropout_rate: float = 0.5,
    grad_probs: np.ndarray | None = None,
    k: int | None = None,
) -> BranchParams:
    """Parameter gradients of a scalar loss given its gradient w.r.t. the CAS
    (and optionally w.r.t. the top-k category probabilities)."""
    features = _check_inputs(features, params, dropout_mask)
    active, scale, hidden, cas = _forward(features, params, dropout_mask, dropout_rate)
    g_cas = np.asarray(loss_grads_wrt_cas, dtype=float)
    if g_cas.shape != cas.shape:
        raise DimensionError(f"cas gradient shape {g_cas.shape} != cas shape {cas.shape}")
    if not np.all(np.isfinite(g_cas)):
        raise ValidationError("cas gradient contains non-finite values")
    if grad_probs is not None:
        k = features.shape[0] if k is None else k
        g_cas = g_cas + topk_mean_backward(cas, k, np.asarray(grad_probs, dtype=float))

    g_logits = g_cas * cas * (1.0 - cas)
    g_hidden = g_logits @ params.cas_weights.T
    if scale is not None:
        g_hidden = g_hidden * scale
    g_pre = np.where(active, g_hidden, 0.0)
    return BranchParams(
        transform_weights=features.T @ g_pre,
        transform_bias=g_pre.sum(axis=0),
        cas_weights=hidden.T @ g_logits,
        cas_bias=g_logits.sum(axis=0),
    )


@dataclass
class AdamState:
    first_moment: BranchParams
    second_moment: BranchParams
    step_count: int = 0

    @classmethod
    def zeros(cls, params: BranchParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.first_moment.copy(), self.second_moment.copy(), self.step_count)


def adam_update(
    params: BranchParams,
    grads: BranchParams,
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[BranchParams, AdamState]:
    step = state.step_count + 1
    new_p, new_m, new_v = {}, {}, {}
    for name in PARAM_NAMES:
        p = getattr(params, name)
        g = getattr(grads, name)
        if g.shape != p.shape:
            raise DimensionError(f"gradient {name} has shape {g.shape}, expected {p.shape}")
        m = beta1 * getattr(state.first_moment, name) + (1 - beta1) * g
        v = beta2 * getattr(state.second_moment, name) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        with np.errstate(over="ignore", invalid="ignore"):
            new_p[name] = p - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        if not np.all(np.isfinite(new_p[name])):
            raise NumericError(f"Adam step made {name} non-finite")
        new_m[name], new_v[name] = m, v
    return BranchParams(**new_p), AdamState(BranchParams(**new_m), BranchParams(**new_v), step)


def grad_check(
    loss_closure: Callable[[BranchParams], tuple[float, BranchParams]],
    params: BranchParams,
    step: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_closure(params)`` must return ``(loss, grads)`` and be deterministic.
    """
    loss0, analytic = loss_closure(params)
    loss1, again = loss_closure(params)
    if loss0 != loss1 or not all(
        np.array_equal(a, b) for a, b in zip(analytic.arrays().values(), again.arrays().values())
    ):
        raise ContractViolation("loss closure is not deterministic")

    worst = 0.0
    probe = params.copy()
    for name in PARAM_NAMES:
        arr = getattr(probe, name)
        ana = getattr(analytic, name)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            plus, _ = loss_closure(probe)
            arr[idx] = orig - step
            minus, _ = loss_closure(probe)
            arr[idx] = orig
            numeric = (plus - minus) / (2 * step)
            a = ana[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return float(worst)
