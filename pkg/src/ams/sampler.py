"""Adaptive inverse-CDF sampler feeding the supplementary branch.

Coordinates on the interpolated time axis are 1-based: an up-sampled sequence
of length H*T has positions 1..H*T, and timestamp sets hold those positions.
The uniform grid position of snippet j (1-based) is (j - 0.5) * H.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)


def aggregate_cas(
    cas: np.ndarray,
    label: np.ndarray,
    mode: str = "maximum",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Collapse the ground-truth channels of a (T, C) CAS into one length-T sequence."""
    channels = np.flatnonzero(np.asarray(label))
    if channels.size == 0:
        raise ValidationError("label has no positive class; cannot aggregate CAS")
    kept = np.asarray(cas, dtype=float)[:, channels]
    if mode == "maximum":
        return kept.max(axis=1)
    if mode == "average":
        return kept.mean(axis=1)
    if mode == "random":
        rng = rng if rng is not None else np.random.default_rng()
        return kept[:, rng.integers(kept.shape[1])].copy()
    raise ValidationError(f"unknown aggregation mode {mode!r}")


def sampling_weights(
    m: np.ndarray,
    eta: float,
    mode: str = "adaptive",
    rng: np.random.Generator | None = None,
    theta_loc_factor: float = 0.7,
) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if mode == "adaptive":
        if not eta > 0:
            raise ValidationError(f"eta must be positive, got {eta}")
        return m.max() - m + eta
    if mode == "uniform":
        return np.ones_like(m)
    if mode == "random":
        rng = rng if rng is not None else np.random.default_rng()
        return 1.0 - rng.random(m.shape)  # (0, 1]
    if mode == "erase":
        alpha = theta_loc_factor * m.mean()
        w = np.where(m > alpha, 0.0, 1.0)
        if not w.any():
            warnings.warn("erase weights are all zero; falling back to uniform sampling", RuntimeWarning)
            log.warning("erase mode erased every snippet (alpha=%.4g); using uniform weights", alpha)
            return np.ones_like(m)
        return w
    raise ValidationError(f"unknown sampling mode {mode!r}")


def interpolate_linear(seq: np.ndarray, H: int) -> np.ndarray:
    """Up-sample a length-T sequence (or (T, D) matrix) to H*T rows, endpoints pinned."""
    seq = np.asarray(seq, dtype=float)
    T = seq.shape[0]
    if T < 2:
        raise ValidationError(f"need at least 2 time steps to interpolate, got {T}")
    if H < 1:
        raise ValidationError(f"interpolation factor must be >= 1, got {H}")
    n = H * T
    coords = np.arange(n) * (T - 1) / (n - 1)
    lo = np.minimum(np.floor(coords).astype(int), T - 2)
    frac = coords - lo
    if seq.ndim > 1:
        frac = frac.reshape((-1,) + (1,) * (seq.ndim - 1))
    # a + f * (b - a) keeps constant stretches exactly constant
    out = seq[lo] + frac * (seq[lo + 1] - seq[lo])
    out[-1] = seq[-1]
    return out


def cumulate(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("sampling weights must be finite and nonnegative")
    cdf = np.cumsum(w)
    if not cdf[-1] > 0:
        raise ValidationError("sampling weights sum to zero")
    return cdf


def sample_timestamps(
    cdf: np.ndarray,
    T: int,
    strategy: str = "deterministic",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Invert the cumulative weights at T points; returns sorted 1-based positions.

    Deterministic targets are the stratum midpoints ((i - 0.5) / T) * total; the
    inverse picks the smallest position whose cumulative weight reaches the target.
    """
    cdf = np.asarray(cdf, dtype=float)
    total = cdf[-1]
    i = np.arange(1, T + 1)
    if strategy == "deterministic":
        targets = (2 * i - 1) * total / (2 * T)
    elif strategy == "stochastic":
        rng = rng if rng is not None else np.random.default_rng()
        targets = (i - rng.random(T)) * total / T  # uniform on ((i-1)/T, i/T]
    else:
        raise ValidationError(f"unknown sampling strategy {strategy!r}")
    # guard against prefix-sum round-off pushing a target past an exact hit
    pos = np.searchsorted(cdf, targets - 1e-12 * total, side="left")
    return np.sort(np.minimum(pos, cdf.size - 1) + 1)


def gather_features(interp_features: np.ndarray, K: np.ndarray) -> np.ndarray:
    K = np.asarray(K)
    n = interp_features.shape[0]
    if K.size and (K.min() < 1 or K.max() > n):
        raise ValidationError(f"timestamps must lie in [1, {n}]")
    return interp_features[K - 1]


def uniform_grid(T: int, H: int) -> np.ndarray:
    j = np.arange(1, T + 1)
    return (2 * j - 1) * H / 2


def temporal_align(cas_raw: np.ndarray, K: np.ndarray, H: int, T: int) -> np.ndarray:
    """Resample CAS rows observed at positions K back onto the uniform snippet grid."""
    cas_raw = np.asarray(cas_raw, dtype=float)
    K = np.asarray(K, dtype=float)
    if cas_raw.shape[0] != K.size:
        raise ValidationError(f"{cas_raw.shape[0]} CAS rows but {K.size} timestamps")
    out = np.empty((T,) + cas_raw.shape[1:])
    for j, x in enumerate(uniform_grid(T, H)):
        right = np.searchsorted(K, x, side="right")
        if right == 0:
            out[j] = cas_raw[0]
        elif right == K.size or K[right - 1] == x:
            out[j] = cas_raw[right - 1]
        else:
            a, b = K[right - 1], K[right]
            frac = (x - a) / (b - a)
            out[j] = cas_raw[right - 1] + frac * (cas_raw[right] - cas_raw[right - 1])
    return out


def timestamps_to_snippets(K: np.ndarray, H: int, T: int) -> np.ndarray:
    """0-based snippet index whose uniform-grid position is nearest to each timestamp."""
    idx = np.floor(np.asarray(K, dtype=float) / H).astype(int)
    return np.clip(idx, 0, T - 1)


@dataclass
class SamplerState:
    aggregated: np.ndarray  # m, (T,)
    weights: np.ndarray  # w, (T,)
    interp_weights: np.ndarray  # (H*T,)
    cdf: np.ndarray  # (H*T,)
    timestamps: np.ndarray  # K, (T,) 1-based
    features: np.ndarray  # (T, D)


def run_sampler(
    features: np.ndarray,
    cas_base: np.ndarray,
    label: np.ndarray,
    *,
    eta: float = 0.75,
    H: int = 20,
    weight_mode: str = "adaptive",
    aggregation_mode: str = "maximum",
    strategy: str = "deterministic",
    theta_loc_factor: float = 0.7,
    rng: np.random.Generator | None = None,
) -> SamplerState:
    T = features.shape[0]
    m = aggregate_cas(cas_base, label, aggregation_mode, rng)
    w = sampling_weights(m, eta, weight_mode, rng, theta_loc_factor)
    w_interp = interpolate_linear(w, H)
    cdf = cumulate(w_interp)
    K = sample_timestamps(cdf, T, strategy, rng)
    f_supp = gather_features(interpolate_linear(features, H), K)
    return SamplerState(m, w, w_interp, cdf, K, f_supp)


def adaptive_sample(features, cas_base, label, hyper, rng=None, **modes):
    """Build supplementary-branch inputs; returns (features, timestamps).

    ``hyper`` supplies eta_sampling, interp_factor and theta_loc_factor; ``modes``
    may set weight_mode, aggregation_mode and strategy.
    """
    state = run_sampler(
        features,
        cas_base,
        label,
        eta=hyper.eta_sampling,
        H=hyper.interp_factor,
        theta_loc_factor=hyper.theta_loc_factor,
        rng=rng,
        **modes,
    )
    return state.features, state.timestamps
