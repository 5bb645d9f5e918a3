"""Two-branch weakly supervised temporal action localization on numpy.

Modules: ``nn`` (backbone, Adam), ``sampler`` (inverse-CDF resampling),
``supervision`` (pseudo-labels and losses), ``training`` (phase schedule),
``infer`` (fusion, proposals, mAP), ``synthgen`` (synthetic data), ``cli``.
"""
from .config import Hyperparams, RunConfig, apply_preset, load_config
from .errors import AmsError, ConfigError, DataError, NumericError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "AmsError",
    "ConfigError",
    "DataError",
    "Hyperparams",
    "NumericError",
    "RunConfig",
    "ValidationError",
    "apply_preset",
    "load_config",
]
