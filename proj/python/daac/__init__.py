"""Discrepancy-aware contrastive learning for hierarchical biosignals.

Thin wrappers over the C++ core. Configs are plain dicts in the same layout
as the JSON run configs; missing keys take their defaults.
"""

import json

from . import _daac
from ._daac import (
    DegenerateBatchError,
    DomainError,
    TrainingError,
    ValidationError,
    auprc,
    auroc,
    epoch_loss,
    inter_view_loss,
    intra_view_loss,
    mutual_information,
    subject_loss,
    temporal_loss,
    trial_loss,
)

SPLIT_NAMES = ("none", "train", "val", "test")


def default_config():
    return json.loads(_daac.default_config_json())


def resolve_config(config=None, overrides=()):
    """Fill defaults and apply dotted ``key=value`` overrides."""
    return json.loads(_daac.resolve_config_json(json.dumps(config or {}), list(overrides)))


def classification_metrics(labels, predictions, scores):
    return json.loads(_daac.classification_metrics_json(labels, predictions, scores))


def generate_synthetic(**synth):
    """Synthetic corpus as numpy arrays; keyword names follow ``data.target_synth``."""
    return _daac.generate_synthetic(json.dumps(synth))


def prepare_target(config=None, seed=0):
    return _daac.prepare_target(json.dumps(config or {}), seed)


def run_seed(config=None, seed=0, out=None):
    """All three stages for one seed. Returns the metrics record."""
    return json.loads(_daac.run_seed_json(json.dumps(config or {}), seed, None if out is None else str(out)))


def run_ablation(config, sweep, jobs=1):
    """Runs a sweep and returns its CSV table."""
    return _daac.run_ablation_csv(json.dumps(config), sweep, jobs)


def sweep_cells(sweep):
    return _daac.sweep_cell_names(sweep)
