"""Python access to the vibemil core: featurization, folds, AUC, GBT, ensemble search and synthetic cohorts."""

import json as _json

from ._vibemil import (
    DAY_DIM,
    FEATURE_ORDER,
    SUBJECT_DIM,
    WINDOW_DIM,
    Error,
    blend,
    clean_value,
    config_hash,
    day_vector,
    distribution_stats,
    grid_search_weights,
    mil_forward,
    mil_parameter_count,
    predict_gbt,
    roc_auc,
    run_task,
    stratified_folds,
    synth_spec_json,
    train_gbt,
    window_bag,
    window_count,
)
from ._vibemil import generate_cohort as _generate_cohort


def default_synth_spec():
    return _json.loads(synth_spec_json())


def generate_cohort(directory, **overrides):
    """Write a synthetic cohort; keyword arguments override fields of the default spec."""
    spec = default_synth_spec()
    unknown = set(overrides) - set(spec)
    if unknown:
        raise ValueError(f"unknown synth fields: {sorted(unknown)}")
    spec.update(overrides)
    _generate_cohort(str(directory), _json.dumps(spec))


__all__ = [
    "DAY_DIM",
    "FEATURE_ORDER",
    "SUBJECT_DIM",
    "WINDOW_DIM",
    "Error",
    "blend",
    "clean_value",
    "config_hash",
    "day_vector",
    "default_synth_spec",
    "distribution_stats",
    "generate_cohort",
    "grid_search_weights",
    "mil_forward",
    "mil_parameter_count",
    "predict_gbt",
    "roc_auc",
    "run_task",
    "stratified_folds",
    "train_gbt",
    "window_bag",
    "window_count",
]
