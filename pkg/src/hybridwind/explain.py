"""Exact interventional Shapley attributions for the hybrid model.

The hybrid prediction is a sum of two submodels, so each one is explained
on its own inputs and the attributions are concatenated: three physics
features followed by eight residual features, eleven named features in
total. Values are computed by enumerating every coalition, so efficiency,
symmetry and dummy hold to floating-point precision.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .data import FEATURES, Dataset, FeatureVector
from .hybrid import HybridModel

MAX_EXACT_FEATURES = 12
PHYS_NAMES = tuple(f"{name}_phys" for name in FEATURES[:3])
RES_NAMES = tuple(f"{name}_res" for name in FEATURES)
NAMES = PHYS_NAMES + RES_NAMES
NON_PHYSICS_RES = tuple(f"{name}_res" for name in FEATURES[3:])

# rows evaluated per predictor call while enumerating coalitions
_CHUNK_ROWS = 1 << 16


@dataclass(frozen=True, eq=False)
class BackgroundSet:
    """Reference records that absent features are marginalised over."""

    records: np.ndarray
    seed: int = 0

    def __post_init__(self):
        rec = np.array(self.records, dtype=float)
        if rec.ndim != 2 or rec.shape[0] < 1:
            raise ValueError("background needs at least one record")
        if rec.shape[1] != len(FEATURES):
            raise ValueError(f"background records must have {len(FEATURES)} features")
        rec.setflags(write=False)
        object.__setattr__(self, "records", rec)

    @property
    def size(self) -> int:
        return self.records.shape[0]

    @property
    def vectors(self) -> list[FeatureVector]:
        return [FeatureVector(tuple(row.tolist())) for row in self.records]

    @classmethod
    def sample(cls, train: Dataset, size: int = 100, seed: int = 0) -> "BackgroundSet":
        """Draw ``size`` records without replacement from a training split."""
        if size < 1:
            raise ValueError("background size must be >= 1")
        n = len(train)
        if n == 0:
            raise ValueError("cannot sample a background from an empty dataset")
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=min(size, n), replace=False))
        return cls(train.x_full()[idx], seed)


def _coalition_weights(d: int) -> np.ndarray:
    return np.array([factorial(s) * factorial(d - s - 1) / factorial(d) for s in range(d)])


def _coalition_values(predict_fn, instance: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Mean prediction for every coalition, indexed by its bitmask."""
    d = instance.size
    nb = background.shape[0]
    masks = ((np.arange(1 << d)[:, None] >> np.arange(d)) & 1).astype(bool)
    values = np.empty(1 << d)
    per_chunk = max(1, _CHUNK_ROWS // nb)
    for start in range(0, 1 << d, per_chunk):
        m = masks[start:start + per_chunk]
        x = np.where(m[:, None, :], instance[None, None, :], background[None, :, :])
        out = np.asarray(predict_fn(x.reshape(-1, d)), dtype=float).reshape(m.shape[0], nb)
        values[start:start + m.shape[0]] = out.mean(axis=1)
    return values


def shapley_exact(predict_fn: Callable[[np.ndarray], np.ndarray], instance, background) -> np.ndarray:
    """Exact Shapley values under the interventional value function.

    Parameters
    ----------
    predict_fn
        Maps an ``(m, d)`` array to ``m`` predictions.
    instance
        The ``d`` feature values to explain.
    background
        ``(nb, d)`` reference rows (or a :class:`BackgroundSet` sliced to ``d``
        columns by the caller). Features outside a coalition take each
        background row's value in turn and the predictions are averaged.

    Returns
    -------
    numpy.ndarray
        One attribution per feature. Their sum equals
        ``f(instance) - mean(f(background))``.
    """
    x = np.asarray(instance, dtype=float).ravel()
    bg = np.atleast_2d(np.asarray(background.records if isinstance(background, BackgroundSet) else background,
                                  dtype=float))
    d = x.size
    if d > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {d}")
    if d == 0:
        return np.zeros(0)
    if bg.shape[1] != d:
        raise ValueError(f"background has {bg.shape[1]} features, instance has {d}")
    values = _coalition_values(predict_fn, x, bg)
    weights = _coalition_weights(d)
    subsets = np.arange(1 << d)
    sizes = np.array([bin(s).count("1") for s in subsets])
    phi = np.empty(d)
    for i in range(d):
        without = subsets[(subsets >> i) & 1 == 0]
        phi[i] = np.sum(weights[sizes[without]] * (values[without | (1 << i)] - values[without]))
    return phi


@dataclass(frozen=True)
class ShapExplanation:
    phi_phys: tuple[float, ...]
    phi_res: tuple[float, ...]
    base_phys: float
    base_res: float
    instance: tuple[float, ...] = field(default=())

    @property
    def phi(self) -> np.ndarray:
        return np.array(self.phi_phys + self.phi_res)

    @property
    def physics_sum(self) -> float:
        return self.base_phys + sum(self.phi_phys)

    @property
    def residual_sum(self) -> float:
        return self.base_res + sum(self.phi_res)

    def reconstruction(self) -> float:
        """``base + sum(phi)`` over both submodels; equals the hybrid prediction."""
        return self.physics_sum + self.residual_sum

    def named(self) -> dict[str, float]:
        return dict(zip(NAMES, self.phi.tolist()))


def _instance_array(instance) -> np.ndarray:
    if isinstance(instance, FeatureVector):
        return instance.as_array()
    x = np.asarray(instance, dtype=float).ravel()
    if x.size != len(FEATURES):
        raise ValueError(f"instance must have {len(FEATURES)} features")
    return x


def explain_hybrid(model: HybridModel, instance, background: BackgroundSet) -> ShapExplanation:
    """Attribute one hybrid prediction to the eleven submodel inputs."""
    x = _instance_array(instance)
    bg = background.records
    phi_phys = shapley_exact(model.physics_power, x[:3], bg[:, :3])
    phi_res = shapley_exact(model.residual_power, x, bg)
    return ShapExplanation(
        phi_phys=tuple(phi_phys.tolist()),
        phi_res=tuple(phi_res.tolist()),
        base_phys=float(np.mean(model.physics_power(bg[:, :3]))),
        base_res=float(np.mean(model.residual_power(bg))),
        instance=tuple(x.tolist()),
    )


def explain_many(model: HybridModel, instances, background: BackgroundSet) -> list[ShapExplanation]:
    rows = instances.x_full() if isinstance(instances, Dataset) else np.atleast_2d(instances)
    return [explain_hybrid(model, row, background) for row in rows]


@dataclass(frozen=True)
class ShapSummary:
    """Mean-|phi| ranking and per-instance submodel sums.

    ``physics_sums`` and ``residual_sums`` are ``base + sum(phi)`` for each
    explained instance, aligned with ``v`` for plotting against wind speed.
    """

    ranking: tuple[tuple[str, float], ...]
    mean_signed: dict
    mean_base_phys: float
    mean_base_res: float
    v: np.ndarray
    physics_sums: np.ndarray
    residual_sums: np.ndarray

    def rank_of(self, name: str, among: Sequence[str] | None = None) -> int:
        """1-based rank of ``name``, optionally within a subset of features."""
        order = [n for n, _ in self.ranking if among is None or n in among]
        return order.index(name) + 1

    def to_dict(self) -> dict:
        return {
            "ranking": [{"feature": n, "mean_abs_phi": m} for n, m in self.ranking],
            "mean_signed_phi": dict(self.mean_signed),
            "mean_base_phys": self.mean_base_phys,
            "mean_base_res": self.mean_base_res,
            "n": int(self.v.size),
        }


def shap_summary(explanations: Sequence[ShapExplanation]) -> ShapSummary:
    if len(explanations) == 0:
        raise ValueError("need at least one explanation")
    phi = np.array([e.phi for e in explanations])
    mean_abs = np.abs(phi).mean(axis=0)
    order = np.argsort(-mean_abs, kind="stable")
    v = np.array([e.instance[0] if e.instance else np.nan for e in explanations])
    return ShapSummary(
        ranking=tuple((NAMES[i], float(mean_abs[i])) for i in order),
        mean_signed=dict(zip(NAMES, phi.mean(axis=0).tolist())),
        mean_base_phys=float(np.mean([e.base_phys for e in explanations])),
        mean_base_res=float(np.mean([e.base_res for e in explanations])),
        v=v,
        physics_sums=np.array([e.physics_sum for e in explanations]),
        residual_sums=np.array([e.residual_sum for e in explanations]),
    )


@dataclass(frozen=True)
class ScatterFit:
    """Attribution of one residual feature against its value, with fits.

    ``linear`` is ``(slope, intercept)``; ``quadratic`` is ``(a2, a1, a0)``
    for ``a2 x**2 + a1 x + a0``. ``slope_stderr`` is the standard error of
    the linear slope.
    """

    feature: str
    values: np.ndarray
    phi: np.ndarray
    linear: tuple[float, float]
    slope_stderr: float
    quadratic: tuple[float, float, float]

    def slope_interval(self, z: float = 1.96) -> tuple[float, float]:
        slope = self.linear[0]
        return slope - z * self.slope_stderr, slope + z * self.slope_stderr

    def to_dict(self) -> dict:
        return {"feature": self.feature, "linear": list(self.linear), "slope_stderr": self.slope_stderr,
                "quadratic": list(self.quadratic), "n": int(self.values.size)}


def _residual_index(feature: str) -> int:
    name = feature[:-4] if feature.endswith("_res") else feature
    if name not in FEATURES:
        raise ValueError(f"unknown residual feature {feature!r}; expected one of {RES_NAMES}")
    return FEATURES.index(name)


def shap_scatter(explanations: Sequence[ShapExplanation], feature: str) -> ScatterFit:
    """Pair a residual feature's values with its attributions and fit polynomials."""
    j = _residual_index(feature)
    if len(explanations) < 3:
        raise ValueError("need at least three explanations to fit")
    x = np.array([e.instance[j] for e in explanations])
    phi = np.array([e.phi_res[j] for e in explanations])
    if np.ptp(x) == 0:
        raise ValueError(f"feature {feature!r} is constant over the explained sample")
    lin = stats.linregress(x, phi)
    quad = np.polyfit(x, phi, 2)
    return ScatterFit(RES_NAMES[j], x, phi, (float(lin.slope), float(lin.intercept)), float(lin.stderr),
                      tuple(float(c) for c in quad))


def write_explanations_csv(explanations: Sequence[ShapExplanation], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("instance_id",) + tuple(f"phi_{n}" for n in NAMES) + ("base_phys", "base_res"))
        for i, e in enumerate(explanations):
            w.writerow([i] + [repr(float(p)) for p in e.phi] + [repr(e.base_phys), repr(e.base_res)])


def write_summary_json(summary: ShapSummary, fits: Sequence[ScatterFit], path) -> None:
    doc = summary.to_dict()
    doc["fits"] = [f.to_dict() for f in fits]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_submodel_sums_csv(summary: ShapSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("v", "physics_sum", "residual_sum"))
        for row in zip(summary.v, summary.physics_sums, summary.residual_sums):
            w.writerow([repr(float(c)) for c in row])
