"""Fully-connected networks trained by mini-batch gradient descent."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import _backend, _reference
from ._reference import ACTIVATION_CODES, LOSS_MAE, LOSS_PINBALL

logger = logging.getLogger(__name__)

HIDDEN_ACTIVATIONS = ("relu", "tanh", "sigmoid")
OUTPUT_ACTIVATIONS = ("identity", "scaled_sigmoid")
LOSSES = ("mae", "pinball")
OPTIMIZERS = ("adam", "sgd")
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(eq=False)
class MlpNetwork:
    """Dense feed-forward network.

    ``weights[l]`` has shape ``(layer_sizes[l], layer_sizes[l + 1])``.
    With ``output_activation="scaled_sigmoid"`` every output lies strictly
    inside ``(0, output_bound)``.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    output_bound: float | None = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        if self.output_activation == "scaled_sigmoid":
            if self.output_bound is None or not self.output_bound > 0:
                raise ValueError("scaled_sigmoid output needs a positive output_bound")
        self.weights = [np.ascontiguousarray(w, dtype=float) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=float).reshape(-1) for b in self.biases]
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of parameter arrays does not match layer_sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[l], self.layer_sizes[l + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {l}: weight {w.shape} / bias {b.shape} inconsistent with {shape}")

    @classmethod
    def init(cls, layer_sizes: Sequence[int], hidden_activation="relu", output_activation="identity",
             output_bound=None, seed=0) -> "MlpNetwork":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layer_sizes), weights, biases, hidden_activation, output_activation, output_bound)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def activation_codes(self) -> list[int]:
        hidden = ACTIVATION_CODES[self.hidden_activation]
        return [hidden] * (len(self.weights) - 1) + [ACTIVATION_CODES[self.output_activation]]

    @property
    def bound(self) -> float:
        return float(self.output_bound) if self.output_bound is not None else 1.0

    def copy(self) -> "MlpNetwork":
        return replace(self, weights=[w.copy() for w in self.weights], biases=[b.copy() for b in self.biases])

    def __call__(self, X) -> np.ndarray:
        return forward(self, X)

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "output_bound": self.output_bound,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpNetwork":
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            weights=[np.array(w, dtype=float).reshape(a, b)
                     for w, a, b in zip(d["weights"], d["layer_sizes"][:-1], d["layer_sizes"][1:])],
            biases=[np.array(b, dtype=float) for b in d["biases"]],
            hidden_activation=d["hidden_activation"],
            output_activation=d["output_activation"],
            output_bound=d.get("output_bound"),
        )


def _as_inputs(net: MlpNetwork, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.layer_sizes[0]:
        raise ValueError(f"input has shape {X.shape}; network expects {net.layer_sizes[0]} features")
    return np.ascontiguousarray(X), single


def forward(net: MlpNetwork, X) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    X, single = _as_inputs(net, X)
    out = _backend.kernels().forward(net.weights, net.biases, net.activation_codes, net.bound, X)
    return out[0] if single else out


def _loss_code(loss: str) -> int:
    if loss == "mae":
        return LOSS_MAE
    if loss == "pinball":
        return LOSS_PINBALL
    raise ValueError(f"loss must be one of {LOSSES}")


def _targets(y, mult, n):
    y = np.ascontiguousarray(np.asarray(y, dtype=float).reshape(-1))
    mult = np.ones(n) if mult is None else np.ascontiguousarray(np.asarray(mult, dtype=float).reshape(-1))
    if y.shape != (n,) or mult.shape != (n,):
        raise ValueError("targets and multipliers must have one entry per input row")
    return y, mult


@dataclass
class Gradients:
    loss: float
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def gradients(net: MlpNetwork, X, y, loss: str = "mae", quantile: float = 0.5, mult=None) -> Gradients:
    """Gradient of the mean batch loss of ``mult * net(X)`` against ``y``.

    ``mult`` is an optional per-sample constant multiplying the network's
    single output before the loss (the kinetic factor of the power
    equation). The absolute-error subgradient at a zero residual is 0.
    """
    X, _ = _as_inputs(net, X)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if net.layer_sizes[-1] != 1:
        raise ValueError("losses are defined for single-output networks")
    y, mult = _targets(y, mult, X.shape[0])
    value, gw, gb = _backend.kernels().loss_grad(
        net.weights, net.biases, net.activation_codes, net.bound, X, y, mult, _loss_code(loss), float(quantile))
    return Gradients(float(value), list(gw), list(gb))


def batch_loss(net: MlpNetwork, X, y, loss: str = "mae", quantile: float = 0.5, mult=None) -> float:
    X, _ = _as_inputs(net, X)
    y, mult = _targets(y, mult, X.shape[0])
    pred = mult * forward(net, X)[:, 0]
    e = y - pred
    if loss == "mae":
        return float(np.mean(np.abs(e)))
    _loss_code(loss)
    return float(np.mean(np.maximum(quantile * e, (quantile - 1.0) * e)))


def smooth_rows(net: MlpNetwork, X, y, mult=None, margin: float = 1e-3) -> np.ndarray:
    """Mask of rows whose ReLU pre-activations and loss residual sit at least ``margin`` from a kink.

    Central differences are only meaningful where the loss is smooth within
    the probe step, so gradient checks should use these rows.
    """
    X, _ = _as_inputs(net, X)
    y, mult = _targets(y, mult, X.shape[0])
    zs, activations = _reference._forward_cache(net.weights, net.biases, net.activation_codes, net.bound, X)
    ok = np.abs(mult * activations[-1][:, 0] - y) >= margin
    if net.hidden_activation == "relu":
        for z in zs[:-1]:
            ok &= np.all(np.abs(z) >= margin, axis=1)
    return ok


def gradient_check(net: MlpNetwork, X, y, loss: str = "mae", quantile: float = 0.5, mult=None,
                   h: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    Each parameter is perturbed by ``+-h``; the gap for one component is
    ``|g - fd| / max(|g|, |fd|, floor)``.
    """
    grads = gradients(net, X, y, loss, quantile, mult)
    probe = net.copy()
    worst = 0.0
    for params, analytic in ((probe.weights, grads.weights), (probe.biases, grads.biases)):
        for p, g in zip(params, analytic):
            flat, gflat = p.reshape(-1), np.asarray(g).reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = batch_loss(probe, X, y, loss, quantile, mult)
                flat[i] = keep - h
                down = batch_loss(probe, X, y, loss, quantile, mult)
                flat[i] = keep
                fd = (up - down) / (2.0 * h)
                worst = max(worst, abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), floor))
    return worst


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 150
    initial_lr: float = 1e-2
    lr_decay_factor: float = 0.5
    patience: int = 5
    min_lr: float = 1e-6
    loss: str = "mae"
    quantile: float = 0.5
    seed: int = 0
    optimizer: str = "adam"
    hidden_layers: int = 2
    width: int = 32
    hidden_activation: str = "relu"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be positive")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ValueError("lr_decay_factor must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile must lie in (0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.hidden_layers < 1 or self.width < 1:
            raise ValueError("hidden_layers and width must be >= 1")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")

    def layer_sizes(self, n_in: int, n_out: int = 1) -> tuple[int, ...]:
        return (n_in,) + (self.width,) * self.hidden_layers + (n_out,)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainTrace:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle for one epoch, derived from ``(seed, epoch)`` only."""
    return np.random.default_rng([seed, epoch]).permutation(n).astype(np.intp)


def train(net: MlpNetwork, train_set, validation_set, cfg: TrainConfig) -> tuple[MlpNetwork, TrainTrace]:
    """Fit ``net`` by mini-batch Adam (or plain SGD) with decay-on-plateau.

    ``train_set`` and ``validation_set`` are ``(X, y)`` or ``(X, y, mult)``
    tuples. The learning rate is multiplied by ``cfg.lr_decay_factor`` after
    ``cfg.patience`` epochs without a new best validation loss; training
    stops at ``cfg.max_epochs`` or once the rate falls below ``cfg.min_lr``.
    The returned network carries the parameters of the best epoch; the input
    network is not modified.
    """
    X, y, mult = _unpack(net, train_set)
    Xv, yv, mult_v = _unpack(net, validation_set)
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    kernels = _backend.kernels()
    loss_code = _loss_code(cfg.loss)
    acts = net.activation_codes
    work = net.copy()
    best = work.copy()
    trace = TrainTrace()
    best_val = math.inf
    lr = cfg.initial_lr
    wait = 0
    if cfg.optimizer == "adam":
        moments = ([np.zeros_like(w) for w in work.weights], [np.zeros_like(b) for b in work.biases],
                   [np.zeros_like(w) for w in work.weights], [np.zeros_like(b) for b in work.biases])
        step = 0
    for epoch in range(cfg.max_epochs):
        order = epoch_order(cfg.seed, epoch, X.shape[0])
        if cfg.optimizer == "adam":
            train_loss, step = kernels.adam_epoch(
                work.weights, work.biases, acts, work.bound, X, y, mult, order, cfg.batch_size, lr,
                loss_code, cfg.quantile, *moments, step, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
        else:
            train_loss = kernels.sgd_epoch(work.weights, work.biases, acts, work.bound, X, y, mult, order,
                                           cfg.batch_size, lr, loss_code, cfg.quantile)
        val_loss = batch_loss(work, Xv, yv, cfg.loss, cfg.quantile, mult_v)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDivergence(
                f"non-finite loss at epoch {epoch} (train={train_loss}, val={val_loss}, lr={lr:g})")
        trace.train_loss.append(float(train_loss))
        trace.val_loss.append(float(val_loss))
        trace.learning_rate.append(lr)
        if val_loss < best_val:
            best_val = val_loss
            trace.best_epoch = epoch
            best = work.copy()
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                lr *= cfg.lr_decay_factor
                wait = 0
                if lr < cfg.min_lr:
                    logger.debug("learning rate below %g after epoch %d; stopping", cfg.min_lr, epoch)
                    break
    return best, trace


def _unpack(net, dataset):
    X, y, *rest = dataset
    X, _ = _as_inputs(net, X)
    y, mult = _targets(y, rest[0] if rest else None, X.shape[0])
    return X, y, mult


def quantile_heads(base: MlpNetwork, train_set, cfg: TrainConfig, q_lo: float, q_hi: float,
                   validation_set=None) -> tuple[MlpNetwork, MlpNetwork]:
    """Fine-tune two copies of ``base`` with the pinball loss at ``q_lo`` and ``q_hi``.

    Without an explicit validation set the training set doubles as one.
    """
    if not 0.0 < q_lo <= q_hi < 1.0:
        raise ValueError(f"need 0 < q_lo <= q_hi < 1, got {q_lo}, {q_hi}")
    validation_set = train_set if validation_set is None else validation_set
    lower, _ = train(base, train_set, validation_set, replace(cfg, loss="pinball", quantile=q_lo))
    upper, _ = train(base, train_set, validation_set, replace(cfg, loss="pinball", quantile=q_hi))
    return lower, upper


DEFAULT_GRID = {"hidden_layers": (1, 2), "width": (16, 32, 64), "initial_lr": (1e-2, 1e-3)}


def grid_search(train_set, validation_set, cfg: TrainConfig, grid=None, output_activation="identity",
                output_bound=None):
    """Exhaustive search over ``grid`` ranked by best validation loss.

    Returns ``(network, trace, cfg)`` of the winning combination.
    """
    grid = DEFAULT_GRID if grid is None else grid
    keys = sorted(grid)
    n_in = np.asarray(train_set[0]).shape[1]
    best = None
    for values in itertools.product(*(grid[k] for k in keys)):
        trial = replace(cfg, **dict(zip(keys, values)))
        net = MlpNetwork.init(trial.layer_sizes(n_in), trial.hidden_activation, output_activation,
                              output_bound, seed=trial.seed)
        fitted, trace = train(net, train_set, validation_set, trial)
        score = trace.val_loss[trace.best_epoch]
        logger.info("grid %s -> val %.6g", dict(zip(keys, values)), score)
        if best is None or score < best[0]:
            best = (score, fitted, trace, trial)
    return best[1], best[2], best[3]
