"""Central finite differences and relative-error checks for analytic gradients."""

from __future__ import annotations

import numpy as np

from .core import softmax, softmax_backward
from .csf import CsfKind
from .losses import make_batch_loss
from .trainer import Mlp, MlpConfig, loss_and_grads


def central_difference(fn, x, h: float = 1e-6) -> np.ndarray:
    """Gradient of scalar ``fn`` at ``x`` by central differences, entry by entry."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """``max |a - b| / max(max |a|, max |b|)``, an inf-norm relative error."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


def check_batch_loss(batch_loss, n: int = 8, k: int = 3, seed: int = 0, h: float = 1e-6,
                     scale: float = 2.0) -> float:
    """Relative error of ``d loss(softmax(z)) / dz`` on random logits."""
    rng = np.random.default_rng(seed)
    z = scale * rng.standard_normal((n, k))
    y = rng.integers(0, k, size=n)
    p = softmax(z)
    analytic = softmax_backward(p, batch_loss(p, y).grad_p)
    numeric = central_difference(lambda zz: batch_loss(softmax(zz), y).value, z, h)
    return relative_error(analytic, numeric)


def check_mlp(batch_loss, widths=(2, 4, 3), activation: str = "tanh", n: int = 8, seed: int = 0,
              h: float = 1e-6) -> float:
    """Relative error of the network's parameter gradients, all layers stacked."""
    rng = np.random.default_rng(seed)
    model = Mlp.init(MlpConfig(tuple(widths), activation, seed))
    # nonzero biases avoid exactly uniform outputs, where MSP/margin CSFs have a kink
    for j in range(1, len(model.params), 2):
        model.params[j] = rng.normal(scale=0.5, size=model.params[j].shape)
    x = rng.standard_normal((n, widths[0]))
    y = rng.integers(0, widths[-1], size=n)
    _, grads = loss_and_grads(model, x, y, batch_loss)
    errs = []
    for i, w in enumerate(model.params):
        def fn(wi, i=i):
            trial = model.copy()
            trial.params[i] = wi
            return loss_and_grads(trial, x, y, batch_loss)[0]
        errs.append((grads[i], central_difference(fn, w, h)))
    analytic = np.concatenate([a.ravel() for a, _ in errs])
    numeric = np.concatenate([b.ravel() for _, b in errs])
    return relative_error(analytic, numeric)


def run(loss: str = "raurc", n: int = 8, k: int = 3, gamma: float = 2.0, lam: float = 0.5,
        epsilon: float = 0.05, csf=CsfKind.MSP, seeds: int = 10, mlp: bool = False) -> float:
    """Worst relative error over ``seeds`` random instances."""
    batch_loss = make_batch_loss(loss, gamma=gamma, lam=lam, epsilon=epsilon, csf=csf)
    if mlp:
        return max(check_mlp(batch_loss, (2, 4, k), n=n, seed=s) for s in range(seeds))
    return max(check_batch_loss(batch_loss, n=n, k=k, seed=s) for s in range(seeds))
