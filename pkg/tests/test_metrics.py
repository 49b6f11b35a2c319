import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridwind.metrics import CSV_HEADER, compute_metrics


def test_two_point_example():
    r = compute_metrics([110.0, 190.0], [100.0, 200.0])
    assert r.mae == pytest.approx(10.0)
    assert r.rmse == pytest.approx(10.0)
    assert r.mape == pytest.approx(7.5)
    assert r.r2 == pytest.approx(0.96)
    assert r.n == 2


def test_perfect_prediction():
    y = np.array([5.0, 50.0, 500.0])
    r = compute_metrics(y, y)
    assert (r.mae, r.rmse, r.mape, r.r2) == (0.0, 0.0, 0.0, 1.0)


def test_mape_floor_excludes_near_zero_targets():
    r = compute_metrics([1.0, 110.0], [0.0, 100.0])
    assert r.mape == pytest.approx(10.0)


def test_errors():
    with pytest.raises(ValueError, match="length"):
        compute_metrics([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        compute_metrics([], [])
    with pytest.raises(ValueError, match="floor"):
        compute_metrics([0.1, 0.2], [0.5, 0.2])
    with pytest.raises(ValueError, match="variance"):
        compute_metrics([1.0, 3.0], [2.0, 2.0])


def test_lenient_mode_returns_nan():
    r = compute_metrics([1.0, 3.0], [2.0, 2.0], strict=False)
    assert math.isnan(r.r2)
    assert r.mae == 1.0


def test_csv_row_matches_header():
    r = compute_metrics([110.0, 190.0], [100.0, 200.0])
    assert len(r.csv_row("hybrid").split(",")) == len(CSV_HEADER.split(","))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(2.0, 1e3)), min_size=2, max_size=50))
def test_rmse_dominates_mae(pairs):
    pred, y = map(np.array, zip(*pairs))
    r = compute_metrics(pred, y, strict=False)
    assert r.rmse >= r.mae - 1e-9
    assert r.mae >= 0
