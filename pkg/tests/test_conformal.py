import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridwind import data, hybrid, preprocess, synthgen
from hybridwind.conformal import (
    ConformalCalibration,
    ConformalPredictor,
    PredictionInterval,
    QuantileHeads,
    UncertaintyReport,
    calibrate_cqr,
    calibrate_split,
    calibration_split,
    conformal_quantile,
    evaluate_uncertainty,
    predict_interval,
    train_quantile_heads,
    write_intervals_csv,
    write_report_json,
)
from hybridwind.nn import TrainConfig

X8 = np.zeros((1, 8))


def test_quantile_rank_oracles():
    assert conformal_quantile(np.arange(1, 10), 0.1) == 9.0
    assert conformal_quantile(np.zeros(20), 0.1) == 0.0
    with pytest.raises(ValueError):
        conformal_quantile(np.arange(5), 0.01)
    with pytest.raises(ValueError):
        conformal_quantile([], 0.1)
    with pytest.raises(ValueError):
        conformal_quantile([1.0, np.nan], 0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=30, max_size=200), st.floats(0.05, 0.5), st.floats(0.05, 0.5))
def test_quantile_monotone_in_alpha(scores, a1, a2):
    lo, hi = sorted((a1, a2))
    assert conformal_quantile(scores, lo) >= conformal_quantile(scores, hi)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=20, max_size=100), st.integers(0, 2 ** 32 - 1))
def test_quantile_ignores_order(scores, seed):
    shuffled = np.random.default_rng(seed).permutation(scores)
    assert conformal_quantile(shuffled, 0.1) == conformal_quantile(scores, 0.1)


def test_split_interval_oracle():
    cal = ConformalCalibration("split_absolute", 0.1, 24.5, 100)
    iv = predict_interval(ConformalPredictor(lambda x: np.full(len(x), 500.0), cal), np.zeros(8))
    assert isinstance(iv, PredictionInterval)
    assert (iv.lower, iv.upper, iv.length) == (475.5, 524.5, 49.0)
    zero = ConformalCalibration("split_absolute", 0.1, 0.0, 100)
    iv0 = predict_interval(ConformalPredictor(lambda x: np.full(len(x), 500.0), zero), np.zeros(8))
    assert iv0.lower == iv0.upper == 500.0


def test_cqr_negative_slack_shrinks_heads():
    heads = (lambda x: np.full(len(x), 490.0), lambda x: np.full(len(x), 510.0))
    y = np.array([495.0, 500.0, 505.0, 498.0, 502.0, 496.0, 504.0, 499.0, 501.0, 500.0])
    cal = calibrate_cqr(heads, (np.zeros((10, 8)), y), 0.1)
    # every point sits at least 5 kW inside the band
    assert cal.q_hat == -5.0
    fixed = ConformalCalibration("cqr", 0.1, -2.0, 10)
    iv = predict_interval(ConformalPredictor(lambda x: np.full(len(x), 500.0), fixed, heads), np.zeros(8))
    assert (iv.lower, iv.upper) == (492.0, 508.0)


def test_cqr_slack_of_two_on_three_points():
    heads = (lambda x: np.full(len(x), 0.0), lambda x: np.full(len(x), 10.0))
    x = np.zeros((3, 8))
    y = np.array([2.0, 8.0, 5.0])
    cal = calibrate_cqr(heads, (x, y), 0.25)
    assert cal.q_hat == -2.0


def test_crossings_are_clamped_and_counted():
    heads = (lambda x: np.array([10.0, 0.0]), lambda x: np.array([4.0, 6.0]))
    cal = ConformalCalibration("cqr", 0.1, 0.0, 10)
    batch = predict_interval(ConformalPredictor(lambda x: np.array([5.0, 3.0]), cal, heads), np.zeros((2, 8)))
    assert batch.clamped == 1
    assert batch.lower[0] == batch.upper[0] == 7.0
    assert (batch.lower[1], batch.upper[1]) == (0.0, 6.0)


def test_degenerate_heads_reduce_to_split(small_run):
    model, test = small_run["model"], small_run["test"]
    cal_set, eval_set = calibration_split(test, 0)
    point = lambda x: hybrid.predict(model, x)
    split_cal = calibrate_split(model, cal_set, 0.1)
    cqr_cal = calibrate_cqr((point, point), cal_set, 0.1)
    assert cqr_cal.q_hat == split_cal.q_hat
    a = predict_interval(ConformalPredictor(model, split_cal), eval_set.x_full())
    b = predict_interval(ConformalPredictor(model, cqr_cal, (point, point)), eval_set.x_full())
    np.testing.assert_array_equal(a.lower, b.lower)
    np.testing.assert_array_equal(a.upper, b.upper)


def test_type_validation():
    with pytest.raises(ValueError):
        ConformalCalibration("split_absolute", 0.1, -1.0, 10)
    with pytest.raises(ValueError):
        ConformalCalibration("bootstrap", 0.1, 1.0, 10)
    with pytest.raises(ValueError):
        ConformalCalibration("cqr", 1.0, 1.0, 10)
    with pytest.raises(ValueError):
        PredictionInterval(1.0, 2.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        PredictionInterval(np.nan, 0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        UncertaintyReport(1.2, 1.0, 0.1, 10)
    with pytest.raises(ValueError):
        ConformalPredictor(lambda x: x[:, 0], ConformalCalibration("cqr", 0.1, 1.0, 10))
    predictor = ConformalPredictor(lambda x: x[:, 0], ConformalCalibration("split_absolute", 0.1, 1.0, 10))
    with pytest.raises(ValueError):
        predict_interval(predictor, np.zeros(7))
    with pytest.raises(ValueError):
        evaluate_uncertainty(predictor, (np.zeros((0, 8)), np.zeros(0)))


def test_calibration_split_is_disjoint(small_run):
    test = small_run["test"]
    cal, ev = calibration_split(test, 3)
    assert len(cal) + len(ev) == len(test)
    key = lambda ds: set(zip(ds.timestamps.tolist(), ds.turbine_ids.tolist()))
    assert not key(cal) & key(ev)


@pytest.fixture(scope="module")
def heteroscedastic():
    synth = synthgen.generate(synthgen.SynthConfig(n=10000, seed=9, noise_profile="power", noise_sd=40.0))
    cleaned, _ = preprocess.clean(synth.dataset)
    train, test = data.split(cleaned, 0.7, 9)
    cfg = TrainConfig(seed=9, max_epochs=60)
    model, _ = hybrid.train_hybrid(train, cfg, cfg)
    heads = train_quantile_heads(model, train, 0.1)
    cal_set, eval_set = calibration_split(test, 9)
    return model, heads, cal_set, eval_set


def test_heads_bracket_the_point_prediction(heteroscedastic):
    model, heads, _, eval_set = heteroscedastic
    x = eval_set.x_full()
    point = hybrid.predict(model, x)
    assert np.mean(heads.lower(x) <= point) > 0.95
    assert np.mean(heads.upper(x) >= point) > 0.95
    assert (heads.q_lo, heads.q_hi) == (0.05, 0.95)
    back = QuantileHeads.from_dict(heads.to_dict(), model)
    np.testing.assert_array_equal(back.lower(x[:5]), heads.lower(x[:5]))


def test_cqr_adapts_to_heteroscedastic_noise(heteroscedastic):
    model, heads, cal_set, eval_set = heteroscedastic
    split_p = ConformalPredictor(model, calibrate_split(model, cal_set, 0.1))
    cqr_p = ConformalPredictor(model, calibrate_cqr(heads, cal_set, 0.1), heads)
    split_r = evaluate_uncertainty(split_p, eval_set)
    cqr_r = evaluate_uncertainty(cqr_p, eval_set)
    for r in (split_r, cqr_r):
        assert 0.85 <= r.empirical_coverage <= 0.95
    assert cqr_r.mean_interval_length < split_r.mean_interval_length
    iv = predict_interval(cqr_p, eval_set.x_full())
    v = eval_set.v
    assert iv.length[(v >= 7.5) & (v <= 12.5)].mean() > iv.length[v < 5.0].mean()


def test_exports(heteroscedastic, tmp_path):
    model, heads, cal_set, eval_set = heteroscedastic
    predictor = ConformalPredictor(model, calibrate_cqr(heads, cal_set, 0.1), heads)
    iv = predict_interval(predictor, eval_set.x_full())
    write_intervals_csv(eval_set.v, eval_set.p, iv, tmp_path / "iv.csv")
    lines = (tmp_path / "iv.csv").read_text().splitlines()
    assert lines[0] == "v,p_obs,point,lower,upper" and len(lines) == len(eval_set) + 1
    write_report_json(evaluate_uncertainty(predictor, eval_set), tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["method"] == "cqr" and doc["evaluation_size"] == len(eval_set)
