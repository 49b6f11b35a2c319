import numpy as np
import pytest

from hybridwind.physics import BETZ_LIMIT
from hybridwind.synthgen import SynthConfig, generate, read_labels


def test_same_config_same_data():
    a = generate(SynthConfig(n=500, seed=3, outlier_rate=0.05))
    b = generate(SynthConfig(n=500, seed=3, outlier_rate=0.05))
    np.testing.assert_array_equal(a.dataset.x_full(), b.dataset.x_full())
    np.testing.assert_array_equal(a.dataset.p, b.dataset.p)
    np.testing.assert_array_equal(a.is_outlier, b.is_outlier)
    c = generate(SynthConfig(n=500, seed=4))
    assert not np.array_equal(a.dataset.p, c.dataset.p)


def test_power_decomposes_into_labelled_parts():
    s = generate(SynthConfig(n=2000, seed=0, outlier_rate=0.05))
    np.testing.assert_allclose(s.dataset.p, s.true_p_phys + s.true_residual + s.noise + s.displacement,
                               rtol=0, atol=1e-9)
    assert np.all(s.displacement[~s.is_outlier] == 0.0)
    assert np.all(np.abs(s.displacement[s.is_outlier]) == 5.0 * s.config.noise_sd)


def test_noise_free_power_is_physics_plus_residual():
    s = generate(SynthConfig(n=1000, seed=1, noise_sd=0.0))
    np.testing.assert_allclose(s.dataset.p, s.true_p_phys + s.true_residual, atol=1e-9)
    s0 = generate(SynthConfig(n=1000, seed=1, noise_sd=0.0, residual_amplitude=0.0))
    np.testing.assert_array_equal(s0.dataset.p, s0.true_p_phys)


def test_truth_respects_physics_limits():
    cfg = SynthConfig(n=5000, seed=2, omega_jitter=0.3, pitch_jitter=0.1)
    s = generate(cfg)
    assert np.all((s.true_cp > 0) & (s.true_cp < BETZ_LIMIT))
    assert np.all(s.true_p_phys <= cfg.rated_power * (1 + 1e-9))
    assert np.all(s.dataset.v >= 0.5) and np.all(s.dataset.v <= cfg.v_max)


def test_v_min_truncates_the_wind_distribution():
    s = generate(SynthConfig(n=3000, seed=5, v_min=3.5))
    assert s.dataset.v.min() >= 3.5


def test_above_rated_output_is_held_at_rated():
    cfg = SynthConfig(n=4000, seed=6, noise_sd=0.0, residual_amplitude=0.0)
    s = generate(cfg)
    high = s.dataset.v > 16.0
    assert high.any()
    np.testing.assert_allclose(s.true_p_phys[high], cfg.rated_power, rtol=1e-9)


def test_linear_residual_falls_with_temperature():
    s = generate(SynthConfig(n=4000, seed=7, noise_sd=0.0))
    loaded = s.true_p_phys > 500.0
    slope = np.polyfit(s.dataset.t_out[loaded], s.true_residual[loaded], 1)[0]
    assert slope < 0


def test_labelled_record_access():
    s = generate(SynthConfig(n=20, seed=0, outlier_rate=0.2))
    item = s[3]
    assert item.record.p == s.dataset.p[3]
    assert item.is_outlier == bool(s.is_outlier[3])
    assert len(list(s)) == 20
    sub = s.subset(np.array([1, 3]))
    assert len(sub) == 2 and sub[1].record.p == s.dataset.p[3]


def test_labels_round_trip(tmp_path):
    s = generate(SynthConfig(n=50, seed=8, outlier_rate=0.1))
    s.write_labels(tmp_path / "labels.csv")
    back = read_labels(tmp_path / "labels.csv")
    np.testing.assert_array_equal(back["is_outlier"], s.is_outlier)
    np.testing.assert_array_equal(back["true_p_phys"], s.true_p_phys)
    np.testing.assert_array_equal(back["index"], np.arange(50))


@pytest.mark.parametrize("bad", [
    {"n": 0}, {"cp_max": 0.6}, {"outlier_rate": 0.5}, {"residual_form": "cubic"},
    {"noise_profile": "pink"}, {"noise_sd": -1.0}, {"v_min": 30.0}, {"omega_min": 2.0},
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_config_dict_round_trip():
    cfg = SynthConfig(n=10, seed=2, residual_form="quadratic")
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"bogus": 1})


def test_residual_tracks_outdoor_temperature():
    s = generate(SynthConfig(n=20000, seed=0, noise_sd=0.0))
    r = s.dataset.p - s.true_p_phys
    load = s.true_p_phys / s.config.rated_power
    loaded = load >= 0.5
    # the effect is scaled by load, so correlate where load is substantial or after dividing it out
    assert np.corrcoef(r[loaded], s.dataset.t_out[loaded])[0, 1] < -0.9
    assert np.corrcoef(r / load, s.dataset.t_out)[0, 1] < -0.9
