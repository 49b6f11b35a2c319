"""Command-line front end: ``hybridwind {synth,preprocess,train,explain,uq,curves}``.

Every command writes plain CSV/JSON into the output directory together
with the effective configuration (``config.json``). Exit codes: 0 success,
1 usage or configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import conformal, explain, preprocess, synthgen
from .config import ConfigError, RunConfig, load_config, write_config
from .data import DataError, Dataset, load_csv, split
from .hybrid import predict, train_data_driven, train_hybrid
from .metrics import CSV_HEADER, compute_metrics
from .nn import TrainingDivergence
from .physics import extract_cp_curve, predict_power, write_cp_curves
from .serialize import ModelBundle, ModelFileError, load_model, save_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_data(path: str, cfg: RunConfig) -> Dataset:
    if not Path(path).is_file():
        raise DataError(f"input file not found: {path}")
    return load_csv(path, cfg.schema)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _require_finite(values, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite {what}")


def cmd_synth(args, cfg: RunConfig, out: Path) -> None:
    scfg = cfg.synthgen if args.n is None else replace(cfg.synthgen, n=args.n)
    data = synthgen.generate(scfg)
    data.dataset.to_csv(out / "synthetic.csv")
    data.write_labels(out / "labels.csv")
    print(f"synth: {len(data)} records, {int(data.is_outlier.sum())} outliers -> {out / 'synthetic.csv'}")


def cmd_preprocess(args, cfg: RunConfig, out: Path) -> None:
    data = _load_data(args.input, cfg)
    cleaned, report = preprocess.clean(data, cfg.preprocess)
    cleaned.to_csv(out / "cleaned.csv")
    doc = report.to_dict()
    doc["dropped_at_ingestion"] = data.dropped_count
    _write_json(doc, out / "cleaning_report.json")
    print(f"preprocess: kept {report.output_count}/{report.input_count} "
          f"(betz {report.betz_rejected}, anomaly {report.anomaly_rejected}, cutoff {report.cutoff_rejected}), "
          f"retained_fraction={report.retained_fraction:.4f}")


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    data = _load_data(args.input, cfg)
    train, test = split(data, cfg.split.train_fraction, cfg.seed)
    train.to_csv(out / "train.csv")
    test.to_csv(out / "test.csv")

    hybrid, trace = train_hybrid(train, cfg.physics_training, cfg.residual_training, cfg.constants)
    baseline, baseline_trace = train_data_driven(train, cfg.data_driven_training)
    heads = conformal.train_quantile_heads(hybrid, train, cfg.conformal.alpha, cfg.conformal.head_training)
    background = explain.BackgroundSet.sample(train, cfg.explain.background_size, cfg.seed)

    x = test.x_full()
    p_hat, p_phys, p_res = predict(hybrid, x, components=True)
    p_data = baseline.predict(x)
    for values, what in ((p_hat, "hybrid predictions"), (p_data, "baseline predictions")):
        _require_finite(values, what)
    rows = {"physics": compute_metrics(p_phys, test.p), "data": compute_metrics(p_data, test.p),
            "hybrid": compute_metrics(p_hat, test.p)}

    bundle = ModelBundle(hybrid, baseline, heads, background, metadata={
        "seed": cfg.seed,
        "train_size": len(train),
        "test_size": len(test),
        "input": Path(args.input).name,
        "input_sha256": _sha256(args.input),
        "config_sha256": {name: _digest(getattr(cfg, name).to_dict()) for name in (
            "physics_training", "residual_training", "data_driven_training", "constants")},
    })
    save_model(bundle, out / "model.json")
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("v", "p_obs", "p_phys", "p_res", "p_hat"))
        for row in zip(test.v, test.p, p_phys, p_res, p_hat):
            w.writerow([repr(float(c)) for c in row])
    _write_json({"hybrid": trace.to_dict(), "data": baseline_trace.to_dict()}, out / "train_trace.json")
    _write_json({k: r.to_dict() for k, r in rows.items()}, out / "metrics.json")
    with open(out / "metrics.csv", "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for label, report in rows.items():
            fh.write(report.csv_row(label) + "\n")
    for label, report in rows.items():
        print(f"train: {label:8s} MAE={report.mae:.3f} RMSE={report.rmse:.3f} "
              f"MAPE={report.mape:.3f}% R2={report.r2:.4f} (n={report.n})")


def cmd_explain(args, cfg: RunConfig, out: Path) -> None:
    bundle = load_model(args.model)
    data = _load_data(args.data, cfg)
    if bundle.background is None:
        raise UsageError("model file carries no explanation background; re-run train")
    n = min(cfg.explain.sample_size, len(data))
    idx = np.sort(np.random.default_rng([cfg.seed, 1]).choice(len(data), size=n, replace=False))
    sample = data.subset(idx)
    explanations = explain.explain_many(bundle.hybrid, sample, bundle.background)
    summary = explain.shap_summary(explanations)
    fits = [explain.shap_scatter(explanations, f) for f in cfg.explain.scatter_features
            if np.ptp(sample.columns[f]) > 0]
    explain.write_explanations_csv(explanations, out / "shap_values.csv")
    explain.write_summary_json(summary, fits, out / "shap_summary.json")
    explain.write_submodel_sums_csv(summary, out / "shap_sums.csv")
    top = ", ".join(f"{name}={value:.2f}" for name, value in summary.ranking[:5])
    print(f"explain: {n} instances; top mean |phi| (kW): {top}")


def _calibrated(bundle: ModelBundle, calibration: Dataset, cfg: RunConfig) -> conformal.ConformalPredictor:
    alpha = cfg.conformal.alpha
    if cfg.conformal.method == "split_absolute":
        return conformal.ConformalPredictor(bundle.hybrid, conformal.calibrate_split(bundle.hybrid, calibration, alpha))
    heads = bundle.heads
    if heads is None:
        raise UsageError("model file carries no quantile heads; re-run train or use method split_absolute")
    if not np.isclose(heads.q_lo, alpha / 2.0):
        raise UsageError(f"quantile heads were trained for alpha={2 * heads.q_lo:g}, config asks for alpha={alpha:g}")
    return conformal.ConformalPredictor(bundle.hybrid, conformal.calibrate_cqr(heads, calibration, alpha), heads)


def cmd_uq(args, cfg: RunConfig, out: Path) -> None:
    bundle = load_model(args.model)
    data = _load_data(args.data, cfg)
    calibration, evaluation = conformal.calibration_split(data, cfg.seed)
    predictor = _calibrated(bundle, calibration, cfg)
    report = conformal.evaluate_uncertainty(predictor, evaluation)
    intervals = conformal.predict_interval(predictor, evaluation.x_full())
    doc = report.to_dict()
    doc["q_hat"] = predictor.calibration.q_hat
    doc["calibration_size"] = predictor.calibration.calibration_size
    _write_json(doc, out / "uq_report.json")
    conformal.write_intervals_csv(evaluation.v, evaluation.p, intervals, out / "intervals.csv")
    print(f"uq: method={report.method} alpha={report.alpha:g} coverage={report.empirical_coverage:.4f} "
          f"mean_length={report.mean_interval_length:.3f} kW (n={report.evaluation_size})")


def cmd_curves(args, cfg: RunConfig, out: Path) -> None:
    bundle = load_model(args.model)
    cc = cfg.curves
    grid = np.arange(cc.lambda_min, cc.lambda_max + 0.5 * cc.lambda_step, cc.lambda_step)
    curves = [extract_cp_curve(bundle.hybrid.physics, theta, grid, cc.v_ref) for theta in cc.thetas]
    write_cp_curves(curves, out / "cp_curves.csv")
    print(f"curves: {len(curves)} Cp curves over {grid.size} tip-speed ratios -> {out / 'cp_curves.csv'}")
    if args.data is None:
        return
    data = _load_data(args.data, cfg)
    calibration, evaluation = conformal.calibration_split(data, cfg.seed)
    predictor = _calibrated(bundle, calibration, cfg)
    iv = conformal.predict_interval(predictor, evaluation.x_full())
    p_phys = predict_power(bundle.hybrid.physics, evaluation.x_phys())
    bins = np.floor(evaluation.v / cc.v_bin_width).astype(int)
    with open(out / "power_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("v_center", "n", "p_obs", "p_phys", "point", "lower", "upper"))
        for b in np.unique(bins):
            m = bins == b
            w.writerow([repr(float((b + 0.5) * cc.v_bin_width)), int(m.sum())]
                       + [repr(float(np.mean(a[m]))) for a in (evaluation.p, p_phys, iv.point, iv.lower, iv.upper)])
    print(f"curves: binned power curve with intervals -> {out / 'power_curve.csv'}")


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "explain": cmd_explain,
    "uq": cmd_uq,
    "curves": cmd_curves,
}


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        # subcommands accept the flags too; SUPPRESS keeps them from resetting top-level values
        flags = argparse.ArgumentParser(add_help=False)
        flags.add_argument("--config", metavar="PATH", default=default, help="JSON run configuration")
        flags.add_argument("--seed", type=int, default=default, help="global seed; overrides the config")
        flags.add_argument("--out", metavar="DIR", default=default, help="output directory; overrides the config")
        flags.add_argument("-v", "--verbose", action="store_true", default=default or False,
                           help="log progress to stderr")
        return flags

    parser = _Parser(prog="hybridwind", description="Hybrid wind-turbine power modelling pipeline.",
                     epilog="exit codes: 0 success, 1 usage or configuration error, 2 data error, "
                            "3 numerical failure",
                     parents=[global_flags(None)])
    common = global_flags(argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("synth", parents=[common], help="generate labelled synthetic SCADA data")
    p.add_argument("--n", type=int, help="number of records (overrides synthgen.n)")
    p = sub.add_parser("preprocess", parents=[common], help="Betz, anomaly and cut-in filtering")
    p.add_argument("input", help="raw SCADA CSV")
    p = sub.add_parser("train", parents=[common], help="train hybrid, physics-only and data-driven models")
    p.add_argument("input", help="cleaned SCADA CSV")
    p = sub.add_parser("explain", parents=[common], help="exact Shapley attributions")
    p.add_argument("model", help="model.json written by train")
    p.add_argument("data", help="CSV of records to explain (typically test.csv)")
    p = sub.add_parser("uq", parents=[common], help="conformal prediction intervals")
    p.add_argument("model", help="model.json written by train")
    p.add_argument("data", help="held-out CSV, split into calibration and evaluation halves")
    p = sub.add_parser("curves", parents=[common], help="Cp curves and binned power curve")
    p.add_argument("model", help="model.json written by train")
    p.add_argument("--data", help="held-out CSV for the power curve with intervals")
    return parser


def _merge_globals(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.seeded(args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _merge_globals(args)
        out = Path(cfg.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {out}: {exc}") from exc
        write_config(cfg, out / "config.json")
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            COMMANDS[args.command](args, cfg, out)
    except (ConfigError, UsageError) as exc:
        print(f"hybridwind: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFileError) as exc:
        print(f"hybridwind: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergence, FloatingPointError) as exc:
        print(f"hybridwind: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining validation failures come from the input data
        print(f"hybridwind: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
