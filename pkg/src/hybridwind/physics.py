"""Physics-inspired power submodel.

Power follows ``P = 0.5 * Cp * rho * A * v**3`` where the power coefficient
``Cp`` is regressed by a network whose bounded-sigmoid output keeps it
strictly below the Betz limit. Power is handled in kW throughout; the
single watt-to-kilowatt conversion happens in :func:`kinetic_power_kw`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import PHYS_FEATURES, Dataset, NormalizationStats
from .nn import MlpNetwork, TrainConfig, TrainTrace, forward, train

BETZ_LIMIT = 0.5926
W_PER_KW = 1000.0
PARAMETERIZATIONS = ("raw", "lambda")


@dataclass(frozen=True)
class TurbineConstants:
    rho: float = 1.225
    rotor_radius: float = 41.0
    swept_area: float = field(init=False)

    def __post_init__(self):
        if not (self.rho > 0 and self.rotor_radius > 0):
            raise ValueError("rho and rotor_radius must be positive")
        object.__setattr__(self, "swept_area", math.pi * self.rotor_radius ** 2)

    def to_dict(self) -> dict:
        return {"rho": self.rho, "rotor_radius": self.rotor_radius}


def kinetic_power_kw(v, rho, area):
    """Wind kinetic power through the rotor disc, ``0.5 * rho * A * v**3``, in kW."""
    v = np.asarray(v, dtype=float)
    return 0.5 * rho * area * v ** 3 / W_PER_KW


def power_coefficient(p_kw, v, rho, area):
    """Invert the power equation for ``Cp``. Raises if any ``v`` is zero."""
    v = np.asarray(v, dtype=float)
    if np.any(v == 0):
        raise ValueError("power coefficient is undefined at zero wind speed")
    return np.asarray(p_kw, dtype=float) / kinetic_power_kw(v, rho, area)


def tip_speed_ratio(omega, v, rotor_radius):
    """``lambda = omega * R / v``."""
    v = np.asarray(v, dtype=float)
    if np.any(v == 0):
        raise ValueError("tip-speed ratio is undefined at zero wind speed")
    return np.asarray(omega, dtype=float) * rotor_radius / v


@dataclass(eq=False)
class PhysicsModel:
    """Cp network plus turbine constants.

    ``parameterization="raw"`` feeds the standardized ``(v, theta, omega)``
    to the network; ``"lambda"`` feeds ``(lambda, theta)``.
    """

    cp_net: MlpNetwork
    constants: TurbineConstants
    input_stats: NormalizationStats
    parameterization: str = "raw"

    def __post_init__(self):
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.cp_net.output_activation != "scaled_sigmoid" or self.cp_net.output_bound != BETZ_LIMIT:
            raise ValueError("cp_net must end in a scaled sigmoid bounded by the Betz limit")

    def network_inputs(self, x_phys: np.ndarray) -> np.ndarray:
        if self.parameterization == "lambda":
            lam = tip_speed_ratio(x_phys[:, 2], x_phys[:, 0], self.constants.rotor_radius)
            raw = np.column_stack([lam, x_phys[:, 1]])
        else:
            raw = x_phys
        return self.input_stats.standardize(raw)

    def kinetic(self, v) -> np.ndarray:
        return kinetic_power_kw(v, self.constants.rho, self.constants.swept_area)

    def to_dict(self) -> dict:
        return {
            "cp_net": self.cp_net.to_dict(),
            "constants": self.constants.to_dict(),
            "input_stats": self.input_stats.to_dict(),
            "parameterization": self.parameterization,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicsModel":
        return cls(
            cp_net=MlpNetwork.from_dict(d["cp_net"]),
            constants=TurbineConstants(**d["constants"]),
            input_stats=NormalizationStats.from_dict(d["input_stats"]),
            parameterization=d.get("parameterization", "raw"),
        )


def _phys_array(x_phys) -> tuple[np.ndarray, bool]:
    x = np.asarray(x_phys, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != 3:
        raise ValueError(f"physics inputs must be (v, theta, omega) triples, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("physics inputs must be finite")
    return x, single


def predict_cp(model: PhysicsModel, x_phys) -> np.ndarray | float:
    """Power coefficient in ``(0, BETZ_LIMIT)`` for ``(v, theta, omega)`` inputs with ``v > 0``."""
    x, single = _phys_array(x_phys)
    if np.any(x[:, 0] <= 0):
        raise ValueError("Cp prediction needs v > 0")
    cp = forward(model.cp_net, model.network_inputs(x))[:, 0]
    return float(cp[0]) if single else cp


def predict_power(model: PhysicsModel, x_phys) -> np.ndarray | float:
    """Power in kW; records with ``v == 0`` give 0 without touching the network."""
    x, single = _phys_array(x_phys)
    if np.any(x[:, 0] < 0):
        raise ValueError("wind speed must be non-negative")
    power = np.zeros(x.shape[0])
    moving = x[:, 0] > 0
    if np.any(moving):
        xm = x[moving]
        power[moving] = forward(model.cp_net, model.network_inputs(xm))[:, 0] * model.kinetic(xm[:, 0])
    return float(power[0]) if single else power


def betz_ceiling_kw(v, constants: TurbineConstants) -> np.ndarray:
    return BETZ_LIMIT * kinetic_power_kw(v, constants.rho, constants.swept_area)


@dataclass(frozen=True)
class CpCurve:
    theta: float
    lambdas: np.ndarray
    cps: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.lambdas) <= 0):
            raise ValueError("lambda samples must be strictly increasing")

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.lambdas.tolist(), self.cps.tolist()))

    @property
    def argmax_lambda(self) -> float:
        return float(self.lambdas[int(np.argmax(self.cps))])


def extract_cp_curve(model: PhysicsModel, theta: float, lambda_grid, v_ref: float = 8.0) -> CpCurve:
    """Sample the learned Cp against tip-speed ratio at fixed pitch and wind speed."""
    lam = np.asarray(lambda_grid, dtype=float)
    if lam.ndim != 1 or lam.size == 0 or np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
        raise ValueError("lambda_grid must be positive and strictly increasing")
    if not v_ref > 0:
        raise ValueError("v_ref must be positive")
    omega = lam * v_ref / model.constants.rotor_radius
    x = np.column_stack([np.full_like(lam, v_ref), np.full_like(lam, theta), omega])
    return CpCurve(float(theta), lam, predict_cp(model, x))


def write_cp_curves(curves, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda", "cp", "theta"])
        for curve in curves:
            for lam, cp in zip(curve.lambdas, curve.cps):
                writer.writerow([repr(float(lam)), repr(float(cp)), repr(curve.theta)])


def _carve_validation(n: int, seed: int, fraction: float = 0.1):
    perm = np.random.default_rng([seed, 7919]).permutation(n)
    n_val = max(1, int(round(fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_physics(data: Dataset, cfg: TrainConfig, constants: TurbineConstants = TurbineConstants(),
                  validation: Dataset | None = None, parameterization: str = "raw",
                  ) -> tuple[PhysicsModel, TrainTrace]:
    """Fit the Cp network end-to-end on observed power.

    The loss is the absolute error between observed power and
    ``Cp_net(x) * kinetic(v)``; the kinetic factor enters as a fixed
    per-sample multiplier. Both are divided by the mean absolute training
    power so the optimizer sees order-one targets. Without ``validation``,
    10% of ``data`` is held out for the learning-rate schedule.
    """
    data = data.subset(data.v > 0)
    if validation is None:
        fit_idx, val_idx = _carve_validation(len(data), cfg.seed)
        validation, data = data.subset(val_idx), data.subset(fit_idx)
    else:
        validation = validation.subset(validation.v > 0)
    if len(data) < 2 or len(validation) < 1:
        raise ValueError("not enough records with v > 0 to train the physics model")

    x = data.x_phys()
    if parameterization == "lambda":
        raw = np.column_stack([tip_speed_ratio(x[:, 2], x[:, 0], constants.rotor_radius), x[:, 1]])
        stats = NormalizationStats.fit(raw, ("lambda", "theta"))
    else:
        stats = NormalizationStats.fit(x, PHYS_FEATURES)
    n_in = stats.mean.size
    net = MlpNetwork.init(cfg.layer_sizes(n_in), cfg.hidden_activation, "scaled_sigmoid", BETZ_LIMIT, seed=cfg.seed)
    model = PhysicsModel(net, constants, stats, parameterization)

    scale = float(np.mean(np.abs(data.p))) or 1.0

    def prepared(ds):
        xp = ds.x_phys()
        return model.network_inputs(xp), ds.p / scale, model.kinetic(xp[:, 0]) / scale

    fitted, trace = train(net, prepared(data), prepared(validation), replace(cfg, loss="mae"))
    return replace(model, cp_net=fitted), trace
