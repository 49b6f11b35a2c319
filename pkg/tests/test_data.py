from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridwind.data import (
    ALL_FIELDS,
    DEFAULT_SCHEMA,
    DataError,
    Dataset,
    FeatureVector,
    NormalizationStats,
    fit_normalization,
    load_csv,
    parse_timestamp,
    split,
)
from hybridwind.synthgen import SynthConfig, generate

HEADER = ",".join(ALL_FIELDS)


def _row(ts="2013-01-01T00:00:00", tid="T01", v="8.0", p="700.0"):
    return f"{ts},{tid},{v},0.0,1.6,10.0,20.0,15.0,0.01,1.0,{p}"


def _write(tmp_path, lines, name="scada.csv"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


def test_load_drops_row_with_empty_wind_speed(tmp_path):
    path = _write(tmp_path, [HEADER, _row(), _row(v=""), _row(ts="2013-01-01T00:10:00"),
                             _row(ts="2013-01-01T00:20:00")])
    data = load_csv(path)
    assert len(data) == 3
    assert data.dropped_count == 1


def test_load_preserves_file_order_and_values(tmp_path):
    path = _write(tmp_path, [HEADER, _row(v="9.5", p="1.25"), _row(ts="2013-01-01T00:10:00", v="3.0")])
    data = load_csv(path)
    assert data.v.tolist() == [9.5, 3.0]
    assert data[0].p == 1.25
    assert data[0].timestamp == datetime(2013, 1, 1, tzinfo=timezone.utc)


def test_load_missing_power_column_is_schema_error(tmp_path):
    header = HEADER.replace(",p", ",power_kw")
    path = _write(tmp_path, [header, _row()])
    with pytest.raises(DataError, match="'p'"):
        load_csv(path)


def test_load_schema_maps_renamed_columns(tmp_path):
    header = HEADER.replace(",p", ",power_kw")
    path = _write(tmp_path, [header, _row(p="42.0")])
    data = load_csv(path, {**DEFAULT_SCHEMA, "p": "power_kw"})
    assert data.p.tolist() == [42.0]


def test_load_semicolon_delimited_and_extra_columns(tmp_path):
    header = HEADER.replace(",", ";") + ";unused"
    path = _write(tmp_path, [header, _row().replace(",", ";") + ";xyz"])
    assert len(load_csv(path)) == 1


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(tmp_path / "absent.csv")
    path = _write(tmp_path, [HEADER, _row(v="nan"), _row(v="abc")])
    with pytest.raises(DataError, match="no valid rows"):
        load_csv(path)


def test_timestamps_are_utc():
    assert parse_timestamp("2013-01-01T01:00:00+01:00") == datetime(2013, 1, 1, tzinfo=timezone.utc)
    assert parse_timestamp("2013-01-01T00:00:00Z") == datetime(2013, 1, 1, tzinfo=timezone.utc)


def test_csv_round_trip_is_exact(tmp_path):
    data = generate(SynthConfig(n=50, seed=3)).dataset
    data.to_csv(tmp_path / "a.csv")
    back = load_csv(tmp_path / "a.csv")
    for name in data.columns:
        np.testing.assert_array_equal(back.columns[name], data.columns[name])
    np.testing.assert_array_equal(back.timestamps, data.timestamps)


def test_feature_vector_shares_physics_values():
    record = generate(SynthConfig(n=3, seed=0)).dataset[1]
    fv = FeatureVector.from_record(record)
    assert fv.x_full[:3] == fv.x_phys == record.x_phys
    with pytest.raises(ValueError):
        FeatureVector((1.0, 2.0))


def test_dataset_is_immutable():
    data = generate(SynthConfig(n=5, seed=0)).dataset
    with pytest.raises(ValueError):
        data.v[0] = 1.0


def test_normalization_two_points_population_std():
    stats = NormalizationStats.fit(np.array([1.0, 3.0]), ("v",))
    assert stats.mean.tolist() == [2.0]
    assert stats.std.tolist() == [1.0]


def test_normalization_rejects_constant_feature_by_name():
    values = np.column_stack([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]])
    with pytest.raises(DataError, match="t_out"):
        NormalizationStats.fit(values, ("v", "t_out"))


def test_fit_normalization_standardizes_to_zero_mean():
    data = generate(SynthConfig(n=500, seed=1)).dataset
    stats = fit_normalization(data)
    z = stats.standardize(data.x_full())
    assert np.all(np.abs(z.mean(axis=0)) < 1e-12)
    x = data.x_full()
    # relative to each feature's magnitude: exact zeros come back as ~1e-18
    assert np.all(np.abs(stats.destandardize(z) - x) <= 1e-10 * np.abs(x).max(axis=0))
    assert NormalizationStats.from_dict(stats.to_dict()).to_dict() == stats.to_dict()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=40).filter(lambda xs: np.ptp(xs) > 1e-3))
def test_standardize_round_trip(values):
    x = np.array(values)
    stats = NormalizationStats.fit(x, ("a",))
    back = stats.destandardize(stats.standardize(x[:, None]))[:, 0]
    np.testing.assert_allclose(back, x, rtol=1e-10, atol=1e-10 * np.max(np.abs(x)))


def test_split_partition_and_determinism():
    data = generate(SynthConfig(n=10, seed=0)).dataset
    a, b = split(data, 0.8, 42)
    assert (len(a), len(b)) == (8, 2)
    keys = lambda d: set(zip(d.timestamps.tolist(), d.turbine_ids.tolist()))
    assert keys(a) | keys(b) == keys(data)
    assert not keys(a) & keys(b)
    a2, b2 = split(data, 0.8, 42)
    np.testing.assert_array_equal(a.v, a2.v)
    np.testing.assert_array_equal(b.p, b2.p)


def test_split_degenerate():
    data = generate(SynthConfig(n=1, seed=0)).dataset
    with pytest.raises(DataError):
        split(data, 0.5, 0)
    with pytest.raises(ValueError):
        split(data, 1.5, 0)


def test_subset_and_from_records():
    data = generate(SynthConfig(n=20, seed=0)).dataset
    sub = data.subset(data.v > 5)
    assert np.all(sub.v > 5)
    rebuilt = Dataset.from_records(sub.records)
    np.testing.assert_array_equal(rebuilt.p, sub.p)
