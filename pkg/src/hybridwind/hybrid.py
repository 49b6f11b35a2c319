"""Additive hybrid model: physics submodel plus a residual network.

``P_hat(x_full) = P_phys(v, theta, omega) + P_res(x_full)``. Training runs in
two strictly sequential steps: the physics submodel is fitted to observed
power, then frozen while the residual network learns what it misses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .data import FEATURES, Dataset, NormalizationStats
from .nn import MlpNetwork, TrainConfig, TrainTrace, forward, train
from .physics import PhysicsModel, TurbineConstants, _carve_validation, predict_power, train_physics


def _full_array(x_full) -> tuple[np.ndarray, bool]:
    x = np.asarray(x_full, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != len(FEATURES):
        raise ValueError(f"expected {len(FEATURES)} features per row, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    return x, single


@dataclass(eq=False)
class HybridModel:
    physics: PhysicsModel
    residual: MlpNetwork
    input_stats: NormalizationStats
    target_stats: NormalizationStats

    def __post_init__(self):
        if self.residual.layer_sizes[0] != len(FEATURES) or self.residual.layer_sizes[-1] != 1:
            raise ValueError("residual network must map 8 inputs to 1 output")
        if self.residual.output_activation != "identity":
            raise ValueError("residual network output must be identity")

    def physics_power(self, x_phys) -> np.ndarray:
        return predict_power(self.physics, x_phys)

    def residual_power(self, x_full) -> np.ndarray:
        x, _ = _full_array(x_full)
        z = forward(self.residual, self.input_stats.standardize(x))[:, 0]
        return self.target_stats.destandardize(z[:, None])[:, 0]

    def predict_components(self, x_full) -> tuple[np.ndarray, np.ndarray]:
        x, _ = _full_array(x_full)
        return self.physics_power(x[:, :3]), self.residual_power(x)

    def to_dict(self) -> dict:
        return {
            "physics": self.physics.to_dict(),
            "residual": self.residual.to_dict(),
            "input_stats": self.input_stats.to_dict(),
            "target_stats": self.target_stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HybridModel":
        return cls(
            physics=PhysicsModel.from_dict(d["physics"]),
            residual=MlpNetwork.from_dict(d["residual"]),
            input_stats=NormalizationStats.from_dict(d["input_stats"]),
            target_stats=NormalizationStats.from_dict(d["target_stats"]),
        )


def predict(model: HybridModel, x_full, components: bool = False):
    """Hybrid power in kW for one feature tuple or a batch of rows.

    With ``components=True`` returns ``(p_hat, p_phys, p_res)``.
    """
    x, single = _full_array(x_full)
    p_phys, p_res = model.predict_components(x)
    p_hat = p_phys + p_res
    if single:
        p_hat, p_phys, p_res = float(p_hat[0]), float(p_phys[0]), float(p_res[0])
    return (p_hat, p_phys, p_res) if components else p_hat


@dataclass(frozen=True)
class ResidualSample:
    x_full: tuple[float, ...]
    r: float


@dataclass(frozen=True)
class ResidualSet:
    """Residual targets ``r = P_obs - P_phys(x)`` with their 8-feature inputs."""

    x_full: np.ndarray
    r: np.ndarray

    def __len__(self) -> int:
        return self.r.size

    def __iter__(self) -> Iterator[ResidualSample]:
        for row, r in zip(self.x_full, self.r):
            yield ResidualSample(tuple(row.tolist()), float(r))


def make_residual_set(physics: PhysicsModel, data: Dataset) -> ResidualSet:
    x = data.x_full()
    r = data.p - predict_power(physics, x[:, :3])
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite residual target")
    return ResidualSet(x, r)


@dataclass
class HybridTrace:
    physics: TrainTrace
    residual: TrainTrace

    def to_dict(self) -> dict:
        return {"physics": self.physics.to_dict(), "residual": self.residual.to_dict()}


def fit_residual(physics: PhysicsModel, fit: Dataset, validation: Dataset, cfg: TrainConfig
                 ) -> tuple[HybridModel, TrainTrace]:
    """Second training step: residual network on the frozen physics model."""
    fit_set = make_residual_set(physics, fit)
    val_set = make_residual_set(physics, validation)
    input_stats = NormalizationStats.fit(fit_set.x_full, FEATURES)
    target_stats = NormalizationStats.fit(fit_set.r, ("r",))
    net = MlpNetwork.init(cfg.layer_sizes(len(FEATURES)), cfg.hidden_activation, "identity", seed=cfg.seed)

    def prepared(rs):
        return input_stats.standardize(rs.x_full), target_stats.standardize(rs.r[:, None])[:, 0]

    fitted, trace = train(net, prepared(fit_set), prepared(val_set), replace(cfg, loss="mae"))
    return HybridModel(physics, fitted, input_stats, target_stats), trace


def train_hybrid(data: Dataset, physics_cfg: TrainConfig, residual_cfg: TrainConfig,
                 constants: TurbineConstants = TurbineConstants(), validation_fraction: float = 0.1,
                 ) -> tuple[HybridModel, HybridTrace]:
    """Two-step training on a (cleaned) training split.

    A validation slice carved from ``data`` drives the learning-rate
    schedules of both steps; residual targets are formed from training
    records only.
    """
    fit_idx, val_idx = _carve_validation(len(data), physics_cfg.seed, validation_fraction)
    fit, validation = data.subset(fit_idx), data.subset(val_idx)
    physics, physics_trace = train_physics(fit, physics_cfg, constants, validation=validation)
    model, residual_trace = fit_residual(physics, fit, validation, residual_cfg)
    return model, HybridTrace(physics_trace, residual_trace)


@dataclass(eq=False)
class DataDrivenModel:
    """Black-box baseline: one network on all eight features."""

    net: MlpNetwork
    input_stats: NormalizationStats
    target_stats: NormalizationStats

    def predict(self, x_full) -> np.ndarray:
        x, _ = _full_array(x_full)
        z = forward(self.net, self.input_stats.standardize(x))[:, 0]
        return self.target_stats.destandardize(z[:, None])[:, 0]

    def to_dict(self) -> dict:
        return {"net": self.net.to_dict(), "input_stats": self.input_stats.to_dict(),
                "target_stats": self.target_stats.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DataDrivenModel":
        return cls(MlpNetwork.from_dict(d["net"]), NormalizationStats.from_dict(d["input_stats"]),
                   NormalizationStats.from_dict(d["target_stats"]))


def train_data_driven(data: Dataset, cfg: TrainConfig, validation_fraction: float = 0.1
                      ) -> tuple[DataDrivenModel, TrainTrace]:
    fit_idx, val_idx = _carve_validation(len(data), cfg.seed, validation_fraction)
    fit, validation = data.subset(fit_idx), data.subset(val_idx)
    input_stats = NormalizationStats.fit(fit.x_full(), FEATURES)
    target_stats = NormalizationStats.fit(fit.p, ("p",))
    net = MlpNetwork.init(cfg.layer_sizes(len(FEATURES)), cfg.hidden_activation, "identity", seed=cfg.seed)

    def prepared(ds):
        return input_stats.standardize(ds.x_full()), target_stats.standardize(ds.p[:, None])[:, 0]

    fitted, trace = train(net, prepared(fit), prepared(validation), replace(cfg, loss="mae"))
    return DataDrivenModel(fitted, input_stats, target_stats), trace
