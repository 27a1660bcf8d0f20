import json
import math

import numpy as np
import pytest

import daac


def test_auroc_example():
    assert daac.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert daac.auprc([0.9, 0.1], [1, 0]) == 1.0


def test_metrics_dict():
    m = daac.classification_metrics([0, 1, 1, 0], [0, 1, 0, 0], [0.1, 0.9, 0.4, 0.2])
    assert m["confusion"] == {"tp": 1, "fn": 1, "fp": 0, "tn": 2}
    assert m["auroc"] == 1.0


def test_mutual_information_of_label_copy():
    y = np.array([0, 1] * 8)
    assert daac.mutual_information(y.astype(float), y) == pytest.approx(math.log(2.0))


def test_losses_closed_forms():
    unit = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert daac.epoch_loss(unit, unit) == pytest.approx(math.log(2.0))
    h = np.array([[1.0], [1.0], [-1.0]])
    assert daac.subject_loss(h, [0, 0, 1], [0, 0, 1], tau=1.0) == pytest.approx(-2.0)
    g = np.array([1.0, 0.0, 0.0, 1.0]).reshape(1, 1, 2, 2)
    assert daac.inter_view_loss(g, g) == pytest.approx(-1.0)


def test_degenerate_batch_raises():
    with pytest.raises(daac.DegenerateBatchError):
        daac.trial_loss(np.eye(2), [0, 0], [3, 3])


def test_config_validation():
    cfg = daac.resolve_config({}, ["loss.lambda_v=0"])
    assert cfg["loss"]["lambda_v"] == 0.0
    with pytest.raises(daac.ValidationError):
        daac.resolve_config({"pretrain": {"epoch": 3}})
    with pytest.raises(ValueError):
        daac.resolve_config({}, ["loss.lambda_x=1"])


def test_synthetic_corpus_arrays():
    c = daac.generate_synthetic(n_subjects=4, trials_per_subject=2, epochs_per_trial=3, channels=2, length=16)
    assert c["values"].shape == (24, 2, 16)
    assert set(np.unique(c["labels"])) == {0, 1}
    again = daac.generate_synthetic(n_subjects=4, trials_per_subject=2, epochs_per_trial=3, channels=2, length=16)
    assert np.array_equal(c["values"], again["values"])


def test_sweep_cells():
    assert daac.sweep_cells("weights")[0] == "1,1,1,1,0"
    assert len(daac.sweep_cells("blocks")) == 8


def test_tiny_run_is_deterministic(tmp_path):
    synth = {"n_subjects": 6, "trials_per_subject": 2, "epochs_per_trial": 4, "channels": 2, "length": 32}
    cfg = {
        "seeds": [0],
        "data": {"target_synth": synth, "external_synth": synth},
        "split": {"mode": "subject_dependent"},
        "de": {"hidden": 4, "latent_dim": 4, "n_down": 2, "epochs": 1},
        "encoder": {"output_dims": 8, "hidden_dims": 4, "depth": 2, "n_heads": 2, "head_dim": 4},
        "pretrain": {"epochs": 1, "batch": 8},
        "finetune": {"epochs": 1, "batch": 8},
    }
    a = daac.run_seed(cfg, 0, tmp_path / "a")
    b = daac.run_seed(cfg, 0)
    assert a == b
    assert 0.0 <= a["aggregate"]["accuracy"]["mean"] <= 1.0
    assert json.loads((tmp_path / "a" / "metrics.json").read_text())["seed"] == 0
