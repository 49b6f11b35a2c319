"""Run configuration: one JSON document with a section per pipeline stage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .data import ALL_FIELDS, DEFAULT_SCHEMA
from .nn import TrainConfig
from .physics import TurbineConstants
from .preprocess import PreprocessConfig
from .synthgen import SynthConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


def _strict(cls, d: Mapping[str, Any], section: str):
    if not isinstance(d, Mapping):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls) if f.init}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ConformalConfig:
    alpha: float = 0.1
    method: str = "cqr"
    head_training: TrainConfig = TrainConfig(initial_lr=1e-3, max_epochs=60)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.method not in ("cqr", "split_absolute"):
            raise ValueError("method must be 'cqr' or 'split_absolute'")


@dataclass(frozen=True)
class ExplainConfig:
    background_size: int = 100
    sample_size: int = 2000
    scatter_features: tuple[str, ...] = ("t_out", "t_nac", "t_rot", "alpha_v", "alpha_w")

    def __post_init__(self):
        if self.background_size < 1 or self.sample_size < 1:
            raise ValueError("background_size and sample_size must be >= 1")


@dataclass(frozen=True)
class CurvesConfig:
    thetas: tuple[float, ...] = (0.0, 0.05, 0.1, 0.2)
    lambda_min: float = 2.0
    lambda_max: float = 14.0
    lambda_step: float = 0.25
    v_ref: float = 8.0
    v_bin_width: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.lambda_min < self.lambda_max:
            raise ValueError("need 0 < lambda_min < lambda_max")
        if not (self.lambda_step > 0 and self.v_ref > 0 and self.v_bin_width > 0):
            raise ValueError("lambda_step, v_ref and v_bin_width must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run. The global ``seed`` overrides per-section seeds."""

    seed: int = 0
    output_dir: str = "out"
    schema: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_SCHEMA))
    preprocess: PreprocessConfig = PreprocessConfig()
    constants: TurbineConstants = TurbineConstants()
    split: SplitConfig = SplitConfig()
    physics_training: TrainConfig = TrainConfig()
    residual_training: TrainConfig = TrainConfig()
    data_driven_training: TrainConfig = TrainConfig()
    conformal: ConformalConfig = ConformalConfig()
    explain: ExplainConfig = ExplainConfig()
    curves: CurvesConfig = CurvesConfig()
    synthgen: SynthConfig = SynthConfig()

    def seeded(self, seed: int) -> "RunConfig":
        """Copy with ``seed`` pushed into every section that draws random numbers."""
        cf = self.conformal
        return replace(
            self,
            seed=seed,
            physics_training=replace(self.physics_training, seed=seed),
            residual_training=replace(self.residual_training, seed=seed),
            data_driven_training=replace(self.data_driven_training, seed=seed),
            conformal=replace(cf, head_training=replace(cf.head_training, seed=seed)),
            synthgen=replace(self.synthgen, seed=seed),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = dict(self.schema)
        d["constants"] = self.constants.to_dict()
        for key in ("explain", "curves"):
            d[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in d[key].items()}
        return d


_TRAIN_SECTIONS = ("physics_training", "residual_training", "data_driven_training")


def config_from_dict(d: Mapping[str, Any]) -> RunConfig:
    """Build a validated :class:`RunConfig`; unknown keys anywhere are rejected."""
    if not isinstance(d, Mapping):
        raise ConfigError("configuration must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw: dict[str, Any] = {}
    if "seed" in d:
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            raise ConfigError("seed must be an integer")
        kw["seed"] = d["seed"]
    if "output_dir" in d:
        kw["output_dir"] = str(d["output_dir"])
    if "schema" in d:
        schema = d["schema"]
        if not isinstance(schema, Mapping):
            raise ConfigError("section 'schema' must be an object")
        bad = sorted(set(schema) - set(ALL_FIELDS))
        if bad:
            raise ConfigError(f"unknown key(s) in 'schema': {', '.join(bad)}")
        kw["schema"] = {**DEFAULT_SCHEMA, **{k: str(v) for k, v in schema.items()}}
    simple = {"preprocess": PreprocessConfig, "constants": TurbineConstants, "split": SplitConfig,
              "synthgen": SynthConfig}
    simple.update({name: TrainConfig for name in _TRAIN_SECTIONS})
    for name, cls in simple.items():
        if name in d:
            kw[name] = _strict(cls, d[name], name)
    if "conformal" in d:
        sec = dict(d["conformal"]) if isinstance(d["conformal"], Mapping) else d["conformal"]
        if isinstance(sec, dict) and "head_training" in sec:
            sec["head_training"] = _strict(TrainConfig, sec["head_training"], "conformal.head_training")
        kw["conformal"] = _strict(ConformalConfig, sec, "conformal")
    for name, cls in (("explain", ExplainConfig), ("curves", CurvesConfig)):
        if name in d:
            sec = {k: tuple(v) if isinstance(v, list) else v for k, v in dict(d[name]).items()} \
                if isinstance(d[name], Mapping) else d[name]
            kw[name] = _strict(cls, sec, name)
    cfg = RunConfig(**kw)
    return cfg.seeded(cfg.seed)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)


def write_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
