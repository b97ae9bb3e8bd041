"""Bias-free ReLU MLP training with plain mini-batch SGD."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .dims import internal_dims
from .spectra import build_svr
from .stats import make_rng
from .tensorio import ModelSpec, WeightStore

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """The loss became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults are lr 0.05, batch 64, 5 epochs, He-normal init."""

    widths: tuple[int, ...] = (784, 40, 40, 40, 10)
    epochs: int = 5
    lr: float = 0.05
    batch_size: int = 64
    seed: int = 0
    subset: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError("need at least two widths, all >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.subset is not None and self.subset < 1:
            raise ValueError("subset must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d.update(optimizer="sgd", init="he_normal", loss="softmax_cross_entropy")
        return d


def he_init(widths, rng) -> list[np.ndarray]:
    """Gaussian weights with standard deviation ``sqrt(2 / fan_in)``."""
    return [rng.standard_normal((b, a)) * np.sqrt(2.0 / a) for a, b in zip(widths, widths[1:])]


def mlp_logits(weights, X) -> np.ndarray:
    h = np.asarray(X, dtype=np.float64)
    for k, W in enumerate(weights):
        if k:
            h = np.maximum(h, 0.0)
        h = h @ W.T
    return h


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grads(weights, X, y) -> tuple[float, list[np.ndarray]]:
    """Mean softmax cross-entropy and its gradient with respect to each weight matrix."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    acts = [X]  # inputs of each layer
    pre = []
    h = X
    for k, W in enumerate(weights):
        if k:
            h = np.maximum(pre[-1], 0.0)
            acts.append(h)
        pre.append(h @ W.T)
    logp = _log_softmax(pre[-1])
    n = X.shape[0]
    loss = -float(logp[np.arange(n), y].mean())
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        grads[k] = delta.T @ acts[k]
        if k:
            delta = (delta @ weights[k]) * (pre[k - 1] > 0)
    return loss, grads


def accuracy(weights, X, y) -> float:
    return float(np.mean(np.argmax(mlp_logits(weights, X), axis=1) == np.asarray(y)))


def _flatten(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(X.shape[0], -1)


def to_model(weights) -> tuple[ModelSpec, WeightStore]:
    widths = [weights[0].shape[1]] + [W.shape[0] for W in weights]
    spec = ModelSpec.mlp(widths)
    return spec, WeightStore({layer.name: W.copy() for layer, W in zip(spec.layers, weights)})


def train_weights(config: TrainConfig, X, y, X_test=None, y_test=None, log=None) -> list[np.ndarray]:
    """SGD loop returning the weight list. ``log`` (a list) receives (epoch, loss, test_acc) rows."""
    rng = make_rng(config.seed)
    X, y = _flatten(X), np.asarray(y)
    if X.shape[1] != config.widths[0]:
        raise ValueError(f"input size {X.shape[1]} does not match first width {config.widths[0]}")
    if config.subset is not None and config.subset < X.shape[0]:
        idx = rng.permutation(X.shape[0])[: config.subset]
        X, y = X[idx], y[idx]
    weights = he_init(config.widths, rng)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(X.shape[0])
        total, seen = 0.0, 0
        for start in range(0, X.shape[0], config.batch_size):
            b = order[start : start + config.batch_size]
            with np.errstate(invalid="ignore", over="ignore"):
                loss, grads = loss_and_grads(weights, X[b], y[b])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch} at sample {start}")
            if config.lr:
                for W, g in zip(weights, grads):
                    W -= config.lr * g
            total += loss * len(b)
            seen += len(b)
        acc = accuracy(weights, _flatten(X_test), y_test) if X_test is not None else float("nan")
        logger.info("epoch %d loss %.4f test_acc %.4f", epoch, total / seen, acc)
        if log is not None:
            log.append((epoch, total / seen, acc))
    return weights


def train_mlp(config: TrainConfig, dataset, log=None) -> tuple[ModelSpec, WeightStore, float]:
    """Train on ``dataset = (train_x, train_y, test_x, test_y)``; returns (spec, store, test accuracy)."""
    xtr, ytr, xte, yte = dataset
    weights = train_weights(config, xtr, ytr, xte, yte, log)
    spec, store = to_model(weights)
    return spec, store, accuracy(weights, _flatten(xte), yte)


@dataclass
class WidthRow:
    n: int
    runs: int
    d_out: list[float]
    d_in: list[float]
    d_out_le_d_in: list[float]
    accuracy: float
    accuracy_std: float
    raw: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k != "raw"}


def width_experiment(n_values, runs: int, dataset, config: TrainConfig | None = None, log=None) -> list[WidthRow]:
    """Train ``[input, n, n, classes]`` networks and record the internal dims of both adjacencies."""
    config = config or TrainConfig()
    xtr, ytr, xte, yte = dataset
    d_input = _flatten(xtr[:1]).shape[1]
    classes = int(max(np.max(ytr), np.max(yte))) + 1
    seeds = np.random.SeedSequence(config.seed)
    rows = []
    for n in n_values:
        dims, accs = [], []
        for child in seeds.spawn(runs):
            seed = int(child.generate_state(1)[0])
            cfg = TrainConfig((d_input, n, n, classes), config.epochs, config.lr, config.batch_size, seed, config.subset)
            spec, store, acc = train_mlp(cfg, dataset)
            graph = build_svr(spec, store)
            dims.append([internal_dims(a.values, a.n_null) for a in graph.adjacencies])
            accs.append(acc)
            if log is not None:
                log.append((n, seed, acc, [(d.d_out, d.d_in) for d in dims[-1]]))
        d_out = np.array([[d.d_out for d in run] for run in dims], dtype=float)
        d_in = np.array([[d.d_in for d in run] for run in dims], dtype=float)
        rows.append(
            WidthRow(
                int(n),
                runs,
                d_out.mean(axis=0).tolist(),
                d_in.mean(axis=0).tolist(),
                (d_out <= d_in).mean(axis=0).tolist(),
                float(np.mean(accs)),
                float(np.std(accs)),
                dims,
            )
        )
    return rows
