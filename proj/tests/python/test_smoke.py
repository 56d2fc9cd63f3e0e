import json
import math
import os
import subprocess

import numpy as np
import pytest

import vibemil


def test_constants_and_feature_order():
    assert len(vibemil.FEATURE_ORDER) == 14
    assert vibemil.FEATURE_ORDER[0] == "cpp"
    assert (vibemil.WINDOW_DIM, vibemil.DAY_DIM, vibemil.SUBJECT_DIM) == (56, 618, 1237)
    assert vibemil.mil_parameter_count() == 189185


def test_window_bag_matches_numpy():
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(700, 14))
    voiced = [True] * 700
    bag = vibemil.window_bag(frames, voiced)
    assert bag.shape == (vibemil.window_count(700), 56)
    first = frames[:200]
    assert np.allclose(bag[0, 0::4], first.mean(axis=0))
    assert np.allclose(bag[0, 1::4], first.std(axis=0))
    assert np.allclose(bag[0, 2::4], np.percentile(first, 5, axis=0))
    assert np.allclose(bag[0, 3::4], np.percentile(first, 95, axis=0))
    assert len(vibemil.day_vector(bag)) == 618


def test_cleaning_and_distribution_stats():
    assert vibemil.clean_value(float("nan")) == 0.0
    assert vibemil.clean_value(float("inf")) == 1e5
    x = [1.0, 2.0, 3.0, 4.0, 10.0]
    s = vibemil.distribution_stats(x)
    assert s[0] == pytest.approx(np.mean(x))
    assert s[2] == pytest.approx(np.median(x))


def test_auc_folds_and_errors():
    assert vibemil.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    ids = [f"s{i}" for i in range(10)]
    folds = vibemil.stratified_folds(ids, [1] * 5 + [0] * 5, 5, 1)
    assert sorted(folds) == ids
    assert sorted(set(folds.values())) == [0, 1, 2, 3, 4]
    with pytest.raises(vibemil.Error) as info:
        vibemil.roc_auc([0.1, 0.2], [1, 1])
    assert "OneClassOnly" in str(info.value)


def test_grid_search_and_blend():
    rng = np.random.default_rng(1)
    y = np.array([0, 1] * 20)
    good = y * 0.6 + rng.uniform(size=40) * 0.5
    noise = rng.uniform(size=40)
    w = vibemil.grid_search_weights(noise.tolist(), good.tolist(), noise.tolist(), y.tolist())
    assert w["oof_auc"] >= vibemil.roc_auc(good.tolist(), y.tolist())
    assert sum(w["units"][:3]) == w["units"][3] == 20
    assert vibemil.blend(1.0, 1.0, 1.0, (9, 7, 4, 20)) == 1.0


def test_gbt_round_trip():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 5))
    y = (X[:, 0] + 0.3 * rng.normal(size=200) > 0).astype(int)
    model = vibemil.train_gbt(X, y.tolist(), X, y.tolist(), {"n_estimators": 20, "max_depth": 3, "seed": 4})
    p = vibemil.predict_gbt(model, X)
    assert vibemil.roc_auc(p, y.tolist()) > 0.9
    assert json.loads(model)["format"] == "vibemil-gbt-v1"


def test_mil_forward_attention():
    bag = np.random.default_rng(3).normal(size=(9, 56))
    logit, attention = vibemil.mil_forward(7, bag)
    assert math.isfinite(logit)
    assert attention.shape == (4, 9)
    assert np.allclose(attention.sum(axis=1), 1.0)


def test_cohort_and_run_task(tmp_path):
    vibemil.generate_cohort(
        tmp_path / "data", n_pos=6, n_neg=6, days_min=1, days_max=1, frames_min=900, frames_max=1000,
        burst_min_frames=100, burst_max_frames=200, burst_slot_frames=500, seed=3,
    )
    assert (tmp_path / "data" / "labels.csv").exists()
    with pytest.raises(ValueError):
        vibemil.generate_cohort(tmp_path / "x", bogus=1)
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        '[run]\nk = 3\nholdout_fraction = 0.25\n[paths]\ndata_dir = "data"\nartifact_dir = "art"\n'
        "[featurize]\nwindow = 50\nhop = 25\n[gbt_level]\nn_estimators = 5\n[gbt_leaf]\nn_estimators = 5\n"
        "[mil]\nepochs = 1\npatience = 1\n"
    )
    assert len(vibemil.config_hash(str(cfg))) == 16
    out = vibemil.run_task(str(cfg), "pvh")
    assert len(out["oof"]) == 12
    assert out["delta"] >= 0.0
    assert out["weights"]["oof_auc"] >= max(out["single_auc"].values())


@pytest.mark.skipif("VIBEMIL_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_reports_usage_errors():
    assert subprocess.run([os.environ["VIBEMIL_CLI"]], capture_output=True).returncode == 2
