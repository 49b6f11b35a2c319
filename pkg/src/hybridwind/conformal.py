"""Split-conformal and conformalized-quantile prediction intervals.

Both methods share one calibration rule: given nonconformity scores
``s_1..s_n`` and miscoverage ``alpha``, the correction ``q_hat`` is the
``ceil((n + 1) * (1 - alpha))``-th smallest score, which gives marginal
coverage of at least ``1 - alpha`` under exchangeability.

``split_absolute`` scores ``|y - y_hat|`` around a point model.
``cqr`` scores ``max(lower - y, y - upper)`` around two quantile heads and
widens (or shrinks, when ``q_hat < 0``) the head band by ``q_hat``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .data import FEATURES, Dataset, NormalizationStats, split
from .hybrid import DataDrivenModel, HybridModel, make_residual_set, predict
from .nn import MlpNetwork, TrainConfig, forward, quantile_heads
from .physics import PhysicsModel, _carve_validation, predict_power

METHODS = ("split_absolute", "cqr")

# absorbs float error in (n + 1) * (1 - alpha) before the ceiling
_CEIL_TOL = 1e-9


@dataclass(frozen=True)
class ConformalCalibration:
    method: str
    alpha: float
    q_hat: float
    calibration_size: int

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not math.isfinite(self.q_hat):
            raise ValueError("q_hat must be finite")
        if self.method == "split_absolute" and self.q_hat < 0:
            raise ValueError("q_hat must be non-negative for absolute scores")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConformalCalibration":
        return cls(**d)


@dataclass(frozen=True)
class PredictionInterval:
    point: float
    lower: float
    upper: float
    alpha: float

    def __post_init__(self):
        if not math.isfinite(self.point):
            raise ValueError("point prediction must be finite")
        if self.lower > self.upper:
            raise ValueError("lower bound exceeds upper bound")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper


@dataclass(frozen=True)
class IntervalBatch:
    """Intervals for many rows; ``clamped`` counts crossings fixed at the midpoint."""

    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    clamped: int = 0

    def __len__(self) -> int:
        return self.point.size

    def __getitem__(self, i: int) -> PredictionInterval:
        return PredictionInterval(float(self.point[i]), float(self.lower[i]), float(self.upper[i]), self.alpha)

    @property
    def length(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass(frozen=True)
class UncertaintyReport:
    empirical_coverage: float
    mean_interval_length: float
    alpha: float
    evaluation_size: int
    method: str = "split_absolute"
    clamped: int = 0

    def __post_init__(self):
        if not 0.0 <= self.empirical_coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def conformal_quantile(scores, alpha: float) -> float:
    """The ``ceil((n + 1)(1 - alpha))``-th smallest score.

    Raises
    ------
    ValueError
        If that rank exceeds ``n``: the calibration set is too small for
        the requested ``alpha``.
    """
    s = np.asarray(scores, dtype=float).ravel()
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    n = s.size
    if n == 0:
        raise ValueError("no calibration scores")
    if not np.all(np.isfinite(s)):
        raise ValueError("calibration scores must be finite")
    k = math.ceil((n + 1) * (1.0 - alpha) - _CEIL_TOL)
    if k > n:
        raise ValueError(f"calibration set of {n} is too small for alpha={alpha} (needs rank {k})")
    return float(np.partition(s, k - 1)[k - 1])


def _point_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(model, HybridModel):
        return lambda x: predict(model, x)
    if isinstance(model, DataDrivenModel):
        return model.predict
    if callable(model):
        return model
    raise TypeError(f"cannot predict with {type(model).__name__}")


def _xy(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return data.x_full(), data.p
    x, y = data
    return np.atleast_2d(np.asarray(x, dtype=float)), np.asarray(y, dtype=float).ravel()


def calibrate_split(model, calibration, alpha: float) -> ConformalCalibration:
    """Absolute-residual calibration of a point model.

    ``calibration`` is a :class:`Dataset` or an ``(x_full, y)`` pair and must
    be disjoint from the model's training data.
    """
    x, y = _xy(calibration)
    scores = np.abs(y - _point_fn(model)(x))
    return ConformalCalibration("split_absolute", alpha, conformal_quantile(scores, alpha), y.size)


@dataclass(eq=False)
class QuantileHeads:
    """Lower and upper power quantiles: frozen physics plus pinball-tuned residual heads."""

    physics: PhysicsModel
    lower_net: MlpNetwork
    upper_net: MlpNetwork
    input_stats: NormalizationStats
    target_stats: NormalizationStats
    q_lo: float
    q_hi: float

    def _head(self, net: MlpNetwork, x_full) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_full, dtype=float))
        z = forward(net, self.input_stats.standardize(x))
        return predict_power(self.physics, x[:, :3]) + self.target_stats.destandardize(z)[:, 0]

    def lower(self, x_full) -> np.ndarray:
        return self._head(self.lower_net, x_full)

    def upper(self, x_full) -> np.ndarray:
        return self._head(self.upper_net, x_full)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower_net.to_dict(),
            "upper": self.upper_net.to_dict(),
            "q_lo": self.q_lo,
            "q_hi": self.q_hi,
        }

    @classmethod
    def from_dict(cls, d: dict, model: HybridModel) -> "QuantileHeads":
        return cls(model.physics, MlpNetwork.from_dict(d["lower"]), MlpNetwork.from_dict(d["upper"]),
                   model.input_stats, model.target_stats, d["q_lo"], d["q_hi"])


HEAD_TRAINING = TrainConfig(initial_lr=1e-3, max_epochs=60)


def train_quantile_heads(model: HybridModel, train: Dataset, alpha: float,
                         cfg: TrainConfig = HEAD_TRAINING, validation_fraction: float = 0.1) -> QuantileHeads:
    """Fine-tune the residual network at quantiles ``alpha/2`` and ``1 - alpha/2``.

    The hybrid model itself is not retrained: both heads start from its
    residual parameters and share its physics term and scaling.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    fit_idx, val_idx = _carve_validation(len(train), cfg.seed, validation_fraction)

    def prepared(ds):
        rs = make_residual_set(model.physics, ds)
        return model.input_stats.standardize(rs.x_full), model.target_stats.standardize(rs.r[:, None])[:, 0]

    q_lo, q_hi = alpha / 2.0, 1.0 - alpha / 2.0
    lower, upper = quantile_heads(model.residual, prepared(train.subset(fit_idx)), cfg, q_lo, q_hi,
                                  validation_set=prepared(train.subset(val_idx)))
    return QuantileHeads(model.physics, lower, upper, model.input_stats, model.target_stats, q_lo, q_hi)


def _head_fns(heads):
    if isinstance(heads, QuantileHeads):
        return heads.lower, heads.upper
    lo, hi = heads
    return _point_fn(lo), _point_fn(hi)


def calibrate_cqr(heads, calibration, alpha: float) -> ConformalCalibration:
    """CQR calibration of a ``(lower, upper)`` pair of quantile predictors."""
    lo_fn, hi_fn = _head_fns(heads)
    x, y = _xy(calibration)
    scores = np.maximum(lo_fn(x) - y, y - hi_fn(x))
    return ConformalCalibration("cqr", alpha, conformal_quantile(scores, alpha), y.size)


@dataclass(eq=False)
class ConformalPredictor:
    """A point model with its calibration, plus heads when the method is ``cqr``."""

    model: object
    calibration: ConformalCalibration
    heads: object = None

    def __post_init__(self):
        if self.calibration.method == "cqr" and self.heads is None:
            raise ValueError("cqr calibration needs quantile heads")


def predict_interval(predictor: ConformalPredictor, x_full):
    """Calibrated interval for one feature row, or an :class:`IntervalBatch` for many."""
    x = np.asarray(x_full, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != len(FEATURES):
        raise ValueError(f"expected {len(FEATURES)} features per row")
    cal = predictor.calibration
    point = np.asarray(_point_fn(predictor.model)(x), dtype=float)
    if cal.method == "split_absolute":
        lower, upper = point - cal.q_hat, point + cal.q_hat
        clamped = 0
    else:
        lo_fn, hi_fn = _head_fns(predictor.heads)
        lower, upper = lo_fn(x) - cal.q_hat, hi_fn(x) + cal.q_hat
        crossed = lower > upper
        clamped = int(crossed.sum())
        if clamped:
            mid = 0.5 * (lower + upper)
            lower = np.where(crossed, mid, lower)
            upper = np.where(crossed, mid, upper)
    batch = IntervalBatch(point, lower, upper, cal.alpha, clamped)
    return batch[0] if single else batch


def evaluate_uncertainty(predictor: ConformalPredictor, evaluation) -> UncertaintyReport:
    x, y = _xy(evaluation)
    if y.size == 0:
        raise ValueError("empty evaluation set")
    iv = predict_interval(predictor, x)
    inside = (iv.lower <= y) & (y <= iv.upper)
    return UncertaintyReport(
        empirical_coverage=float(inside.mean()),
        mean_interval_length=float(iv.length.mean()),
        alpha=predictor.calibration.alpha,
        evaluation_size=int(y.size),
        method=predictor.calibration.method,
        clamped=iv.clamped,
    )


def calibration_split(data: Dataset, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded, disjoint halves: ``(calibration, evaluation)``."""
    return split(data, 0.5, seed)


def write_intervals_csv(v, p_obs, intervals: IntervalBatch, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("v", "p_obs", "point", "lower", "upper"))
        for row in zip(v, p_obs, intervals.point, intervals.lower, intervals.upper):
            w.writerow([repr(float(c)) for c in row])


def write_report_json(report: UncertaintyReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "ConformalCalibration",
    "ConformalPredictor",
    "IntervalBatch",
    "PredictionInterval",
    "QuantileHeads",
    "UncertaintyReport",
    "calibrate_cqr",
    "calibrate_split",
    "calibration_split",
    "conformal_quantile",
    "evaluate_uncertainty",
    "predict_interval",
    "train_quantile_heads",
    "write_intervals_csv",
    "write_report_json",
]
