"""SCADA cleaning: Betz-limit filter, iterative median anomaly filter, low-speed cutoff."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import DataError, Dataset, TurbineRecord
from .physics import BETZ_LIMIT, kinetic_power_kw

logger = logging.getLogger(__name__)

MAD_TO_SIGMA = 1.4826
SPREAD_ESTIMATORS = ("mad", "std")


@dataclass(frozen=True)
class PreprocessConfig:
    betz_limit: float = BETZ_LIMIT
    sigma_multiplier: float = 3.0
    v_cutoff: float = 3.5
    bin_width: float = 0.5
    max_iterations: int = 20
    rho: float = 1.225
    rotor_radius: float = 41.0
    spread: str = "mad"
    min_bin_count: int = 3

    def __post_init__(self):
        if not 0.0 < self.betz_limit < 1.0:
            raise ValueError("betz_limit must lie in (0, 1)")
        if not self.sigma_multiplier > 0:
            raise ValueError("sigma_multiplier must be positive")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        if self.v_cutoff < 0:
            raise ValueError("v_cutoff must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.rho > 0 and self.rotor_radius > 0):
            raise ValueError("rho and rotor_radius must be positive")
        if self.spread not in SPREAD_ESTIMATORS:
            raise ValueError(f"spread must be one of {SPREAD_ESTIMATORS}")

    @property
    def swept_area(self) -> float:
        return np.pi * self.rotor_radius ** 2

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown preprocess keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AnomalyReport:
    rejected: int
    iterations: int
    converged: bool
    rejected_per_iteration: tuple[int, ...] = field(default=())


@dataclass(frozen=True)
class CleaningReport:
    input_count: int
    betz_rejected: int
    anomaly_rejected: int
    cutoff_rejected: int
    retained_fraction: float
    output_count: int
    anomaly_iterations: int = 0
    anomaly_converged: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def compute_cp(record: TurbineRecord, rho: float = 1.225, rotor_radius: float = 41.0) -> float:
    """Power coefficient implied by the record's power and wind speed."""
    if record.v == 0:
        raise ValueError("power coefficient is undefined at zero wind speed")
    return record.p / float(kinetic_power_kw(record.v, rho, np.pi * rotor_radius ** 2))


def _cp_column(data: Dataset, cfg: PreprocessConfig) -> np.ndarray:
    cp = np.full(len(data), np.inf)
    moving = data.v != 0
    cp[moving] = data.p[moving] / kinetic_power_kw(data.v[moving], cfg.rho, cfg.swept_area)
    return cp


def betz_filter(data: Dataset, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[Dataset, int]:
    """Drop records whose implied Cp exceeds the Betz limit, or with ``v == 0``."""
    if len(data) == 0:
        return data, 0
    keep = _cp_column(data, cfg) <= cfg.betz_limit
    return data.subset(keep), int(len(data) - keep.sum())


def _spread(values: np.ndarray, how: str) -> float:
    if how == "std":
        return float(np.std(values))
    return MAD_TO_SIGMA * float(np.median(np.abs(values - np.median(values))))


def _curve(v: np.ndarray, knot_v: np.ndarray, knot_p: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation, extended linearly past the end knots."""
    out = np.interp(v, knot_v, knot_p)
    if knot_v.size < 2:
        return out
    lo, hi = v < knot_v[0], v > knot_v[-1]
    slope_lo = (knot_p[1] - knot_p[0]) / (knot_v[1] - knot_v[0])
    slope_hi = (knot_p[-1] - knot_p[-2]) / (knot_v[-1] - knot_v[-2])
    out[lo] = knot_p[0] + slope_lo * (v[lo] - knot_v[0])
    out[hi] = knot_p[-1] + slope_hi * (v[hi] - knot_v[-1])
    return out


def _anomaly_pass(v: np.ndarray, p: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """Boolean mask of records deviating from the binned median power curve."""
    bins = np.floor(v / cfg.bin_width).astype(np.int64)
    order = np.argsort(bins, kind="stable")
    ids, starts = np.unique(bins[order], return_index=True)
    groups = np.split(order, starts[1:])
    # piecewise-linear curve through the per-bin (median v, median P) knots
    knot_v = np.array([np.median(v[g]) for g in groups])
    knot_p = np.array([np.median(p[g]) for g in groups])
    deviation = p - _curve(v, knot_v, knot_p)
    reject = np.zeros(v.shape[0], dtype=bool)
    for g in groups:
        if g.size < cfg.min_bin_count:
            continue
        d = deviation[g]
        reject[g] = np.abs(d) > cfg.sigma_multiplier * _spread(d, cfg.spread)
    return reject


def iterative_median_filter(data: Dataset, cfg: PreprocessConfig = PreprocessConfig()
                            ) -> tuple[Dataset, AnomalyReport]:
    """Repeatedly reject records far from the binned median power curve.

    Each pass bins survivors by wind speed, builds a piecewise-linear curve
    through the per-bin median power, and rejects records whose deviation
    from it exceeds ``sigma_multiplier`` times the bin's spread of
    deviations (scaled MAD by default). Passes repeat on the survivors until
    one rejects nothing or ``max_iterations`` is reached. Bins with fewer
    than ``min_bin_count`` records are left alone.
    """
    if len(data) == 0:
        raise DataError("cannot filter an empty dataset")
    alive = np.arange(len(data))
    v, p = data.v, data.p
    history = []
    converged = False
    for _ in range(cfg.max_iterations):
        reject = _anomaly_pass(v[alive], p[alive], cfg)
        history.append(int(reject.sum()))
        if not reject.any():
            converged = True
            break
        alive = alive[~reject]
        if alive.size == 0:
            raise DataError("iterative median filter rejected every record; check bin_width/sigma_multiplier")
    if not converged:
        logger.warning("median filter stopped at max_iterations=%d without converging", cfg.max_iterations)
    report = AnomalyReport(rejected=len(data) - alive.size, iterations=len(history), converged=converged,
                           rejected_per_iteration=tuple(history))
    return data.subset(alive), report


def low_velocity_cutoff(data: Dataset, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[Dataset, int]:
    """Keep records with ``v >= v_cutoff``."""
    keep = data.v >= cfg.v_cutoff
    return data.subset(keep), int(len(data) - keep.sum())


def clean(data: Dataset, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[Dataset, CleaningReport]:
    """Betz filter, then anomaly filter, then low-speed cutoff."""
    n_in = len(data)
    stage, betz_rejected = betz_filter(data, cfg)
    if len(stage) == 0:
        raise DataError("every record violates the Betz limit")
    stage, anomaly = iterative_median_filter(stage, cfg)
    stage, cutoff_rejected = low_velocity_cutoff(stage, cfg)
    report = CleaningReport(
        input_count=n_in,
        betz_rejected=betz_rejected,
        anomaly_rejected=anomaly.rejected,
        cutoff_rejected=cutoff_rejected,
        retained_fraction=len(stage) / n_in if n_in else 0.0,
        output_count=len(stage),
        anomaly_iterations=anomaly.iterations,
        anomaly_converged=anomaly.converged,
    )
    return stage, report
