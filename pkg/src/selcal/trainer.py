"""A small multilayer perceptron trained with momentum SGD, backprop by hand."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import argmax_predict, softmax, softmax_backward, write_text_atomic
from .metrics import EQUAL_WIDTH_15, binned_cwece, binned_ece

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpConfig:
    widths: tuple[int, ...]  # (d, hidden..., k)
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 3:
            raise ValueError("need input, at least one hidden layer and output widths")
        if min(widths) < 1:
            raise ValueError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        object.__setattr__(self, "widths", widths)


@dataclass(frozen=True)
class SgdConfig:
    lr_schedule: tuple[tuple[int, float], ...] = ((0, 0.01),)  # (first epoch, lr)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        sched = tuple(sorted((int(e), float(lr)) for e, lr in self.lr_schedule))
        if not sched or sched[0][0] != 0:
            raise ValueError("the learning-rate schedule must start at epoch 0")
        if any(lr <= 0 for _, lr in sched):
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        object.__setattr__(self, "lr_schedule", sched)

    def lr_at(self, epoch: int) -> float:
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if epoch >= start:
                lr = value
        return lr


@dataclass
class Mlp:
    config: MlpConfig
    params: list[np.ndarray]  # [W1, b1, W2, b2, ...], W has shape (fan_in, fan_out)

    @classmethod
    def init(cls, config: MlpConfig) -> "Mlp":
        rng = np.random.default_rng(config.seed)
        gain = 2.0 if config.activation == "relu" else 1.0
        params = []
        for fan_in, fan_out in zip(config.widths[:-1], config.widths[1:]):
            params.append(rng.standard_normal((fan_in, fan_out)) * math.sqrt(gain / fan_in))
            params.append(np.zeros(fan_out))
        return cls(config, params)

    def copy(self) -> "Mlp":
        return Mlp(self.config, [w.copy() for w in self.params])

    def predict_proba(self, x) -> np.ndarray:
        return softmax(forward(self, x)[0])


def _act(name, h):
    return np.maximum(h, 0.0) if name == "relu" else np.tanh(h)


def _act_grad(name, h, a):
    return (h > 0).astype(h.dtype) if name == "relu" else 1.0 - a * a


def forward(model: Mlp, x):
    """Return ``(logits, cache)``; the cache holds every layer's input and pre-activation."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.config.widths[0]:
        raise ValueError(f"expected {model.config.widths[0]} features, got {x.shape[1]}")
    cache = []
    a = x
    n_layers = len(model.params) // 2
    for i in range(n_layers):
        w, b = model.params[2 * i], model.params[2 * i + 1]
        h = a @ w + b
        cache.append((a, h))
        a = h if i == n_layers - 1 else _act(model.config.activation, h)
    return a, cache


def backward(model: Mlp, cache, dlogits) -> list[np.ndarray]:
    """Parameter gradients given ``dL/dlogits``; no weight decay here."""
    g = np.asarray(dlogits, dtype=np.float64)
    if g.shape != cache[-1][1].shape:
        raise ValueError(f"dlogits has shape {g.shape}, expected {cache[-1][1].shape}")
    grads: list[np.ndarray] = [None] * len(model.params)  # type: ignore[list-item]
    for i in reversed(range(len(cache))):
        a_in, _ = cache[i]
        grads[2 * i] = a_in.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = g @ model.params[2 * i].T
            h_prev = cache[i - 1][1]
            g = g * _act_grad(model.config.activation, h_prev, a_in)
    return grads


def loss_and_grads(model: Mlp, x, y, batch_loss):
    """Scalar batch loss and parameter gradients, through softmax and the network."""
    logits, cache = forward(model, x)
    p = softmax(logits)
    lg = batch_loss(p, y)
    return float(lg.value), backward(model, cache, softmax_backward(p, lg.grad_p))


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    acc: float
    ece: float
    cwece: float


@dataclass
class SgdState:
    velocity: list[np.ndarray] = field(default_factory=list)


def sgd_step(model: Mlp, grads, state: SgdState, lr: float, momentum: float, weight_decay: float):
    """In-place update ``v = mu v + (g + wd theta)``, ``theta -= lr v``."""
    if not state.velocity:
        state.velocity = [np.zeros_like(w) for w in model.params]
    for w, g, v in zip(model.params, grads, state.velocity):
        g = g + weight_decay * w
        v *= momentum
        v += g
        w -= lr * v


def train(x, y, batch_loss, mlp: MlpConfig | Mlp, sgd: SgdConfig, callback=None):
    """Train and return ``(model, epoch_logs)``.

    Each epoch reshuffles with an RNG seeded by ``sgd.seed``; batch losses
    that rank samples (AURC) see only their own mini-batch.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    model = mlp.copy() if isinstance(mlp, Mlp) else Mlp.init(mlp)
    if x.shape[1] != model.config.widths[0] or y.max() >= model.config.widths[-1]:
        raise ValueError("data does not match the network's input or output width")
    rng = np.random.default_rng(sgd.seed)
    state = SgdState()
    logs = []
    n = x.shape[0]
    for epoch in range(sgd.epochs):
        lr = sgd.lr_at(epoch)
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, sgd.batch_size)):
            idx = order[start:start + sgd.batch_size]
            value, grads = loss_and_grads(model, x[idx], y[idx], batch_loss)
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(epoch, b, value)
            sgd_step(model, grads, state, lr, sgd.momentum, sgd.weight_decay)
            total += value * idx.size
            seen += idx.size
        p = model.predict_proba(x)
        entry = EpochLog(epoch, lr, total / seen, float(np.mean(argmax_predict(p) == y)),
                         binned_ece(p, y, EQUAL_WIDTH_15), binned_cwece(p, y, EQUAL_WIDTH_15))
        logs.append(entry)
        log.debug("epoch %d loss %.6f acc %.4f", epoch, entry.loss, entry.acc)
        if callback is not None:
            callback(entry)
    return model, logs


def save_checkpoint(model: Mlp, path) -> None:
    """One JSON header line, then one line of ``repr`` floats per tensor."""
    header = {
        "widths": list(model.config.widths),
        "activation": model.config.activation,
        "seed": model.config.seed,
        "shapes": [list(w.shape) for w in model.params],
    }
    lines = [json.dumps(header)]
    lines += [" ".join(repr(float(v)) for v in w.ravel()) for w in model.params]
    write_text_atomic(path, "\n".join(lines) + "\n")


def load_checkpoint(path) -> Mlp:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        params = []
        for shape in header["shapes"]:
            values = np.array([float(v) for v in fh.readline().split()])
            params.append(values.reshape(shape))
    cfg = MlpConfig(tuple(header["widths"]), header["activation"], header["seed"])
    return Mlp(cfg, params)
