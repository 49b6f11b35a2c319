"""Synthetic SCADA generator with a known power-coefficient surface.

Records obey ``P = 0.5 * Cp*(lambda, theta) * rho * A * v**3`` plus an
optional temperature-driven residual, Gaussian noise and labelled outliers.
The ground-truth surface is a Gaussian bump over the tip-speed ratio whose
peak moves to lower ratios as the blades pitch::

    Cp*(lambda, theta) = cp_max * exp(-(lambda - lambda_peak(theta))**2 / (2 w**2))
    lambda_peak(theta) = lambda_opt - pitch_shift * theta

Rotor speed follows optimal-ratio tracking between ``omega_min`` and
``omega_max``; above rated power the pitch is solved so the aerodynamic
power equals the rated value. Both controllers are deterministic functions
of wind speed by default. Optional jitter (multiplicative on rotor speed,
an additive pitch offset below rated) spreads samples over the
(lambda, theta) plane when the surface itself is under study.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from .data import Dataset, TurbineRecord
from .metrics import MetricsReport, compute_metrics
from .physics import BETZ_LIMIT, kinetic_power_kw, tip_speed_ratio

RESIDUAL_FORMS = ("linear", "quadratic")
NOISE_PROFILES = ("constant", "power")


@dataclass(frozen=True)
class SynthConfig:
    n: int = 20000
    seed: int = 0
    rho: float = 1.225
    rotor_radius: float = 41.0
    rated_power: float = 2050.0
    # ground-truth Cp surface
    cp_max: float = 0.48
    lambda_opt: float = 8.0
    pitch_shift: float = 10.0
    cp_width: float = 2.5
    # wind and controllers
    weibull_shape: float = 2.0
    weibull_scale: float = 8.0
    v_min: float = 0.0
    v_max: float = 25.0
    omega_min: float = 0.9
    omega_max: float = 1.8
    omega_jitter: float = 0.0
    pitch_jitter: float = 0.0
    # residual effect, as a fraction of rated power, scaled by load
    residual_amplitude: float = 0.03
    residual_form: str = "linear"
    t_out_mean: float = 12.0
    t_out_sd: float = 7.0
    # noise and anomalies
    noise_sd: float = 20.5
    noise_profile: str = "constant"
    outlier_rate: float = 0.0
    outlier_magnitude: float = 5.0
    n_turbines: int = 4
    start: str = "2013-01-01T00:00:00"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0.0 < self.cp_max < BETZ_LIMIT:
            raise ValueError(f"cp_max must lie in (0, {BETZ_LIMIT})")
        if not 0.0 <= self.outlier_rate < 0.5:
            raise ValueError("outlier_rate must lie in [0, 0.5)")
        if self.residual_form not in RESIDUAL_FORMS:
            raise ValueError(f"residual_form must be one of {RESIDUAL_FORMS}")
        if self.noise_profile not in NOISE_PROFILES:
            raise ValueError(f"noise_profile must be one of {NOISE_PROFILES}")
        for name in ("rho", "rotor_radius", "rated_power", "cp_width", "weibull_shape",
                     "weibull_scale", "omega_min", "omega_max", "t_out_sd", "n_turbines"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("noise_sd", "omega_jitter", "pitch_jitter", "outlier_magnitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.v_min < self.v_max:
            raise ValueError("need 0 <= v_min < v_max")
        if self.omega_min > self.omega_max:
            raise ValueError("omega_min exceeds omega_max")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthgen keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def lambda_peak(self, theta):
        return self.lambda_opt - self.pitch_shift * np.asarray(theta, dtype=float)

    def cp_truth(self, lam, theta):
        """Ground-truth power coefficient; always below ``cp_max``."""
        d = np.asarray(lam, dtype=float) - self.lambda_peak(theta)
        return self.cp_max * np.exp(-d * d / (2.0 * self.cp_width ** 2))


@dataclass(frozen=True)
class LabeledRecord:
    record: TurbineRecord
    is_outlier: bool
    true_p_phys: float
    true_residual: float


class SyntheticData:
    """Generated records plus their ground-truth labels, column-wise.

    Indexing yields :class:`LabeledRecord` objects. ``noise`` and
    ``displacement`` hold the random draws so that
    ``p == true_p_phys + true_residual + noise + displacement``.
    """

    def __init__(self, dataset, is_outlier, true_p_phys, true_residual, noise, displacement, true_cp, config):
        self.dataset = dataset
        self.is_outlier = is_outlier
        self.true_p_phys = true_p_phys
        self.true_residual = true_residual
        self.noise = noise
        self.displacement = displacement
        self.true_cp = true_cp
        self.config = config
        for arr in (is_outlier, true_p_phys, true_residual, noise, displacement, true_cp):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.dataset)

    def __getitem__(self, i: int) -> LabeledRecord:
        return LabeledRecord(
            record=self.dataset[i],
            is_outlier=bool(self.is_outlier[i]),
            true_p_phys=float(self.true_p_phys[i]),
            true_residual=float(self.true_residual[i]),
        )

    def __iter__(self) -> Iterator[LabeledRecord]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, index) -> "SyntheticData":
        index = np.asarray(index)
        return SyntheticData(
            self.dataset.subset(index),
            self.is_outlier[index].copy(),
            self.true_p_phys[index].copy(),
            self.true_residual[index].copy(),
            self.noise[index].copy(),
            self.displacement[index].copy(),
            self.true_cp[index].copy(),
            self.config,
        )

    def write_labels(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "is_outlier", "true_p_phys", "true_residual"])
            for i in range(len(self)):
                writer.writerow([i, int(self.is_outlier[i]), repr(float(self.true_p_phys[i])),
                                 repr(float(self.true_residual[i]))])


def read_labels(path) -> dict[str, np.ndarray]:
    """Read a labels file written by :meth:`SyntheticData.write_labels`."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {
        "index": np.array([int(r["index"]) for r in rows]),
        "is_outlier": np.array([r["is_outlier"] == "1" for r in rows]),
        "true_p_phys": np.array([float(r["true_p_phys"]) for r in rows]),
        "true_residual": np.array([float(r["true_residual"]) for r in rows]),
    }


def _pitch_for_power(cfg: SynthConfig, lam, v, target_kw, area):
    """Pitch that brings the aerodynamic power down to ``target_kw``."""
    cp_needed = target_kw / kinetic_power_kw(v, cfg.rho, area)
    offset = cfg.cp_width * np.sqrt(2.0 * np.log(cfg.cp_max / cp_needed))
    return (cfg.lambda_opt - lam + offset) / cfg.pitch_shift


def generate(cfg: SynthConfig) -> SyntheticData:
    """Draw ``cfg.n`` labelled records; fully determined by ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    R = cfg.rotor_radius
    area = np.pi * R * R

    # Weibull wind speeds truncated to [v_min, v_max] by inverse-CDF sampling
    cdf = 1.0 - np.exp(-(np.array([cfg.v_min, cfg.v_max]) / cfg.weibull_scale) ** cfg.weibull_shape)
    u = rng.uniform(cdf[0], cdf[1], n)
    v = cfg.weibull_scale * (-np.log1p(-u)) ** (1.0 / cfg.weibull_shape)
    v = np.maximum(v, 0.5)
    omega_ctrl = np.clip(cfg.lambda_opt * v / R, cfg.omega_min, cfg.omega_max)
    omega = omega_ctrl * (1.0 + rng.uniform(-cfg.omega_jitter, cfg.omega_jitter, n))
    lam = tip_speed_ratio(omega, v, R)

    kinetic = kinetic_power_kw(v, cfg.rho, area)
    theta = rng.uniform(0.0, cfg.pitch_jitter, n)
    # above rated the controller pitches exactly to rated power
    over = cfg.cp_truth(lam, theta) * kinetic > cfg.rated_power
    if np.any(over):
        theta[over] = np.maximum(_pitch_for_power(cfg, lam[over], v[over], cfg.rated_power, area), theta[over])

    cp = cfg.cp_truth(lam, theta)
    p_phys = cp * kinetic

    t_out = rng.normal(cfg.t_out_mean, cfg.t_out_sd, n)
    load = p_phys / cfg.rated_power
    t_nac = t_out + 12.0 * load + rng.normal(0.0, 2.0, n)
    t_rot = t_out + 6.0 * load + rng.normal(0.0, 2.0, n)
    alpha_v = rng.normal(0.0, 0.06, n)
    alpha_w = rng.uniform(0.0, 2.0 * np.pi, n)

    z_t = (t_out - cfg.t_out_mean) / cfg.t_out_sd
    amp = cfg.residual_amplitude * cfg.rated_power
    if cfg.residual_form == "linear":
        residual = -amp * z_t * load
    else:
        residual = amp * (z_t * z_t - 1.0) * load

    sd = cfg.noise_sd * (np.ones(n) if cfg.noise_profile == "constant" else 0.1 + 0.9 * load)
    noise = rng.normal(0.0, 1.0, n) * sd
    is_outlier = rng.uniform(size=n) < cfg.outlier_rate
    signs = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
    displacement = np.where(is_outlier, signs * cfg.outlier_magnitude * cfg.noise_sd, 0.0)

    p = p_phys + residual + noise + displacement

    start = np.datetime64(cfg.start, "s")
    steps = np.arange(n) // cfg.n_turbines
    timestamps = start + steps * np.timedelta64(600, "s")
    ids = np.array([f"T{k + 1:02d}" for k in range(cfg.n_turbines)])[np.arange(n) % cfg.n_turbines]

    dataset = Dataset(
        columns={"v": v, "theta": theta, "omega": omega, "t_out": t_out, "t_nac": t_nac, "t_rot": t_rot,
                 "alpha_v": alpha_v, "alpha_w": alpha_w, "p": p},
        timestamps=timestamps,
        turbine_ids=ids,
        provenance=f"synthgen(seed={cfg.seed}, n={n})",
    )
    return SyntheticData(dataset, is_outlier, p_phys, residual, noise, displacement, cp, cfg)


def truth_metrics(data: SyntheticData, p_phys_pred, p_res_pred) -> tuple[MetricsReport, MetricsReport]:
    """Score the learned components against their ground truth separately.

    The residual report skips MAPE (true residuals are centred on zero).
    """
    phys = compute_metrics(p_phys_pred, data.true_p_phys, strict=False)
    res = compute_metrics(p_res_pred, data.true_residual, mape_floor=None, strict=False)
    return phys, res
