import csv
import hashlib
import json

import pytest

from hybridwind.cli import main
from hybridwind.config import ConfigError, RunConfig, config_from_dict, load_config

FAST = {
    "synthgen": {"n": 4000, "outlier_rate": 0.05},
    "physics_training": {"max_epochs": 40},
    "residual_training": {"max_epochs": 40},
    "data_driven_training": {"max_epochs": 40},
    "conformal": {"head_training": {"max_epochs": 20, "initial_lr": 0.001}},
    "explain": {"background_size": 30, "sample_size": 60},
}


def _sha(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(FAST))
    base = ["--config", str(cfg), "--seed", "7"]
    out = {name: root / name for name in ("synth", "prep", "train", "explain", "uq", "curves")}
    assert main(["synth", *base, "--out", str(out["synth"])]) == 0
    raw = out["synth"] / "synthetic.csv"
    raw_digest = _sha(raw)
    assert main(["preprocess", str(raw), *base, "--out", str(out["prep"])]) == 0
    assert _sha(raw) == raw_digest
    cleaned = out["prep"] / "cleaned.csv"
    assert main(["train", str(cleaned), *base, "--out", str(out["train"])]) == 0
    model, test = out["train"] / "model.json", out["train"] / "test.csv"
    assert main(["explain", str(model), str(test), *base, "--out", str(out["explain"])]) == 0
    assert main(["uq", str(model), str(test), *base, "--out", str(out["uq"])]) == 0
    assert main(["curves", str(model), "--data", str(test), *base, "--out", str(out["curves"])]) == 0
    return root, cfg, out


def test_every_command_writes_its_artifacts(pipeline):
    _, _, out = pipeline
    expected = {
        "synth": ("synthetic.csv", "labels.csv"),
        "prep": ("cleaned.csv", "cleaning_report.json"),
        "train": ("model.json", "train.csv", "test.csv", "predictions.csv", "train_trace.json",
                  "metrics.json", "metrics.csv"),
        "explain": ("shap_values.csv", "shap_summary.json", "shap_sums.csv"),
        "uq": ("uq_report.json", "intervals.csv"),
        "curves": ("cp_curves.csv", "power_curve.csv"),
    }
    for step, names in expected.items():
        for name in names + ("config.json",):
            assert (out[step] / name).is_file(), f"{step}/{name}"


def test_merged_config_is_recorded(pipeline):
    _, _, out = pipeline
    written = json.loads((out["train"] / "config.json").read_text())
    assert written["seed"] == 7
    assert written["physics_training"]["seed"] == 7
    assert written["physics_training"]["max_epochs"] == 40
    assert written["output_dir"] == str(out["train"])
    assert config_from_dict(written).physics_training.max_epochs == 40


def test_preprocess_report(pipeline):
    _, _, out = pipeline
    report = json.loads((out["prep"] / "cleaning_report.json").read_text())
    assert report["output_count"] == len(_rows(out["prep"] / "cleaned.csv"))
    assert report["anomaly_rejected"] > 0


def test_train_reports_three_models(pipeline):
    _, _, out = pipeline
    metrics = json.loads((out["train"] / "metrics.json").read_text())
    assert set(metrics) == {"physics", "data", "hybrid"}
    assert metrics["hybrid"]["mae"] <= 0.8 * metrics["physics"]["mae"]
    assert metrics["hybrid"]["mae"] <= 1.1 * metrics["data"]["mae"]
    assert len((out["train"] / "metrics.csv").read_text().splitlines()) == 4
    preds = _rows(out["train"] / "predictions.csv")
    row = preds[0]
    assert float(row["p_hat"]) == pytest.approx(float(row["p_phys"]) + float(row["p_res"]), abs=1e-9)


def test_uq_report_schema(pipeline):
    _, _, out = pipeline
    report = json.loads((out["uq"] / "uq_report.json").read_text())
    assert report["mean_interval_length"] > 0
    assert 0.8 <= report["empirical_coverage"] <= 1.0
    assert report["alpha"] == 0.1
    assert len(_rows(out["uq"] / "intervals.csv")) == report["evaluation_size"]


def test_explain_and_curve_schemas(pipeline):
    _, _, out = pipeline
    phi = _rows(out["explain"] / "shap_values.csv")
    assert len(phi) == 60 and "phi_t_out_res" in phi[0]
    summary = json.loads((out["explain"] / "shap_summary.json").read_text())
    assert {f["feature"] for f in summary["fits"]} >= {"t_out_res"}
    assert _rows(out["curves"] / "cp_curves.csv")[0].keys() == {"lambda", "cp", "theta"}
    assert list(_rows(out["curves"] / "power_curve.csv")[0]) == [
        "v_center", "n", "p_obs", "p_phys", "point", "lower", "upper"]


def test_synth_is_reproducible(pipeline, tmp_path):
    _, cfg, out = pipeline
    assert main(["synth", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path)]) == 0
    assert _sha(tmp_path / "synthetic.csv") == _sha(out["synth"] / "synthetic.csv")
    assert _sha(tmp_path / "labels.csv") == _sha(out["synth"] / "labels.csv")
    assert main(["synth", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path / "b")]) == 0
    assert _sha(tmp_path / "b" / "synthetic.csv") != _sha(out["synth"] / "synthetic.csv")


def test_train_is_reproducible(pipeline, tmp_path):
    _, cfg, out = pipeline
    args = ["train", str(out["prep"] / "cleaned.csv"), "--config", str(cfg), "--seed", "7", "--out", str(tmp_path)]
    assert main(args) == 0
    assert _sha(tmp_path / "model.json") == _sha(out["train"] / "model.json")


def test_flags_after_subcommand_override_config(tmp_path):
    assert main(["--seed", "3", "synth", "--n", "50", "--out", str(tmp_path)]) == 0
    written = json.loads((tmp_path / "config.json").read_text())
    assert written["seed"] == 3 and written["synthgen"]["seed"] == 3
    assert len(_rows(tmp_path / "synthetic.csv")) == 50


def test_unknown_config_key_exits_1(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"preprocess": {"sigma_mult": 3}}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "sigma_mult" in capsys.readouterr().err


def test_unparseable_config_exits_1(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert main(["synth", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")]) == 1


def test_usage_errors_exit_1(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--seed", "abc"])
    assert exc.value.code == 1


def test_missing_input_exits_2(tmp_path):
    assert main(["preprocess", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "o")]) == 2
    assert main(["explain", str(tmp_path / "absent.json"), str(tmp_path / "x.csv"), "--out", str(tmp_path)]) == 2


def test_malformed_data_exits_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,turbine_id,v\n2020-01-01T00:00:00,T1,3\n")
    assert main(["preprocess", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_divergent_training_exits_3(pipeline, tmp_path):
    _, _, out = pipeline
    cfg = tmp_path / "diverge.json"
    cfg.write_text(json.dumps({**FAST, "residual_training": {"initial_lr": 1e300, "max_epochs": 5}}))
    args = ["train", str(out["prep"] / "cleaned.csv"), "--config", str(cfg), "--out", str(tmp_path / "o")]
    assert main(args) == 3


def test_config_defaults_and_validation(tmp_path):
    assert load_config(None) == RunConfig()
    with pytest.raises(ConfigError):
        config_from_dict({"conformal": {"alpha": 1.5}})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": "one"})
    with pytest.raises(ConfigError):
        config_from_dict({"schema": {"wind": "v"}})
    with pytest.raises(ConfigError):
        config_from_dict({"conformal": {"head_training": {"lr": 1.0}}})
    cfg = config_from_dict({"seed": 5, "explain": {"scatter_features": ["t_out"]}})
    assert cfg.residual_training.seed == 5 and cfg.synthgen.seed == 5
    assert cfg.explain.scatter_features == ("t_out",)
    assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
