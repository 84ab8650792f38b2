"""Offline contextual-bandit action optimization.

Thin wrapper over the C++ core in ``cpopt._core``. Functions that return
JSON text in C++ are decoded to dicts here.
"""

import json as _json

from . import _core
from ._core import (  # noqa: F401
    COUNTERFACTUAL_PROPENSITY,
    ActionSpace,
    AugmentConfig,
    Dataset,
    EnvParams,
    Error,
    GAConfig,
    LoggedInteraction,
    NumericalError,
    OPPGConfig,
    ParseError,
    RewardEnsemble,
    ShapeError,
    StochasticPolicy,
    SyntheticEnv,
    TrainConfig,
    ValidationError,
    augment_counterfactual,
    bootstrap_sample,
    clip_weight,
    clipped_ips_estimate,
    default_config_ini,
    derive_seed,
    ips_estimate,
    oppg_train,
    snap_discrete,
    split_dataset,
    train_ensemble,
)


def optimize_action(ensemble, context, config=None, policy=None):
    """Best action for one context; returns (action, predicted value, diagnostics dict)."""
    action, value, diag = _core.optimize_action(ensemble, list(context), config or GAConfig(), policy)
    return action, value, _json.loads(diag)


def run_benchmark(config_ini="", profile="fast", out_dir=None):
    """Runs the whole pipeline and returns the summary as a dict."""
    return _json.loads(_core.run_benchmark(config_ini, profile, out_dir))
