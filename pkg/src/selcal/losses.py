"""Per-sample and batch losses with analytic gradients w.r.t. probabilities.

Per-sample losses take ``p`` of shape ``(n, k)`` (or a single row) and labels,
and return a :class:`LossGrad` whose ``value`` has one entry per row and whose
``grad_p`` has the shape of ``p``.  Batch losses return a scalar ``value`` and
the gradient of that scalar w.r.t. every probability entry.

Composition with the softmax Jacobian (to reach logits) is left to the
caller, see :func:`selcal.core.softmax_backward`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .core import clamp_probs
from .csf import CsfKind, csf_gradient, csf_score
from .softrank import SoftRankConfig, soft_rank_ascending, soft_rank_vjp


@dataclass(frozen=True)
class FocusConfig:
    gamma: float = 0.0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class RAurcConfig:
    lam: float = 0.5
    csf: CsfKind = CsfKind.MSP
    softrank: SoftRankConfig = field(default_factory=SoftRankConfig)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        object.__setattr__(self, "csf", CsfKind.parse(self.csf))


@dataclass(frozen=True)
class LossGrad:
    value: np.ndarray | float
    grad_p: np.ndarray


BaseLoss = Callable[[np.ndarray, np.ndarray], LossGrad]


def _rows(p, labels):
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != p2.shape[0]:
        raise ValueError("one label per probability row is required")
    return p2, y, single


def _pack(value, grad, single):
    if single:
        return LossGrad(float(value[0]), grad[0])
    return LossGrad(value, grad)


def _gamma(cfg) -> float:
    return cfg.gamma if isinstance(cfg, FocusConfig) else FocusConfig(float(cfg)).gamma


def _weighted_log_loss(p, labels, weight_fn):
    """Loss ``-w(p_y) ln p_y`` where ``weight_fn`` returns ``(w, dw/dp)``."""
    p2, y, single = _rows(p, labels)
    rows = np.arange(p2.shape[0])
    pt = clamp_probs(p2[rows, y])
    w, dw = weight_fn(pt)
    log_pt = np.log(pt)
    value = -w * log_pt
    grad = np.zeros_like(p2)
    grad[rows, y] = -dw * log_pt - w / pt
    return _pack(value, grad, single)


def cross_entropy(p, labels) -> LossGrad:
    return _weighted_log_loss(p, labels, lambda pt: (np.ones_like(pt), np.zeros_like(pt)))


def _focal_weight(pt, gamma):
    w = (1.0 - pt) ** gamma
    if gamma == 0:
        return w, np.zeros_like(pt)
    with np.errstate(divide="ignore", invalid="ignore"):
        dw = -gamma * (1.0 - pt) ** (gamma - 1.0)
    # at p = 1 the log factor is zero; keep the product finite
    return w, np.where(pt < 1.0, dw, 0.0)


def focal(p, labels, cfg: FocusConfig | float = FocusConfig(2.0)) -> LossGrad:
    gamma = _gamma(cfg)
    return _weighted_log_loss(p, labels, lambda pt: _focal_weight(pt, gamma))


def focal_fl53(p, labels) -> LossGrad:
    """Focal loss with gamma 5 when the true-class probability is below 0.2, else 3."""
    def weight(pt):
        w5, d5 = _focal_weight(pt, 5.0)
        w3, d3 = _focal_weight(pt, 3.0)
        low = pt < 0.2
        return np.where(low, w5, w3), np.where(low, d5, d3)

    return _weighted_log_loss(p, labels, weight)


def inverse_focal(p, labels, cfg: FocusConfig | float = FocusConfig(1.0)) -> LossGrad:
    gamma = _gamma(cfg)

    def weight(pt):
        w = (1.0 + pt) ** gamma
        dw = gamma * (1.0 + pt) ** (gamma - 1.0) if gamma else np.zeros_like(pt)
        return w, dw

    return _weighted_log_loss(p, labels, weight)


def inverse_focal_true_class_grad(pt, gamma):
    """d/dp of ``-(1+p)^gamma ln p``: ``-gamma (1+p)^(gamma-1) ln p - (1+p)^gamma / p``."""
    pt = np.asarray(pt, dtype=np.float64)
    return -gamma * (1.0 + pt) ** (gamma - 1.0) * np.log(pt) - (1.0 + pt) ** gamma / pt


def focal_true_class_grad(pt, gamma):
    pt = np.asarray(pt, dtype=np.float64)
    first = gamma * (1.0 - pt) ** (gamma - 1.0) * np.log(pt) if gamma else 0.0
    return first - (1.0 - pt) ** gamma / pt


def _inverse_focal_ratio(pt):
    # gradient > 0  <=>  gamma > (1 + p) / (p ln(1/p))
    return (1.0 + pt) / (pt * -math.log(pt))


def inverse_focal_critical_point(tol: float = 1e-10) -> tuple[float, float]:
    """Return ``(p*, gamma*)``: the smallest gamma admitting a positive gradient."""
    res = minimize_scalar(_inverse_focal_ratio, bounds=(1e-9, 1.0 - 1e-9),
                          method="bounded", options={"xatol": tol})
    return float(res.x), float(res.fun)


def inverse_focal_critical_gamma() -> float:
    return inverse_focal_critical_point()[1]


def inverse_focal_positive_region(gamma: float, grid) -> np.ndarray:
    """Grid points where the inverse focal gradient at the true class is positive."""
    grid = np.asarray(grid, dtype=np.float64)
    return grid[inverse_focal_true_class_grad(grid, gamma) > 0]


def _per_sample(base_loss: BaseLoss, p2, y):
    lg = base_loss(p2, y)
    loss = np.atleast_1d(np.asarray(lg.value, dtype=np.float64))
    return loss, np.asarray(lg.grad_p, dtype=np.float64).reshape(p2.shape)


def mc_aurc_loss(p, labels, csf=CsfKind.MSP, softrank_cfg: SoftRankConfig | None = None,
                 base_loss: BaseLoss = cross_entropy) -> LossGrad:
    """Monte-Carlo AURC with soft ranks: ``mean(-ln(1 - r_i/(n+1)) * loss_i)``.

    The gradient couples the whole batch: besides ``w_i * dloss_i`` every
    sample receives the soft-rank VJP of ``loss_i * dw_i/dr_i`` routed
    through the CSF gradient.
    """
    csf = CsfKind.parse(csf)
    softrank_cfg = softrank_cfg or SoftRankConfig()
    p2 = np.atleast_2d(np.asarray(p, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = p2.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    loss, dloss = _per_sample(base_loss, p2, y)
    if csf is CsfKind.NEG_LOSS_ORACLE:
        scores, dscore = csf_score(csf, p2, loss=loss), csf_gradient(csf, p2, loss_grad=dloss)
    else:
        scores, dscore = csf_score(csf, p2), csf_gradient(csf, p2)
    res = soft_rank_ascending(scores, softrank_cfg)
    weight = -np.log1p(-res.ranks / (n + 1))
    value = float(np.mean(weight * loss))
    upstream = loss / (n * (n + 1 - res.ranks))
    dscores = soft_rank_vjp(scores, softrank_cfg, upstream, result=res)
    grad = (weight / n)[:, None] * dloss + dscores[:, None] * dscore
    return LossGrad(value, grad)


def r_aurc_loss(p, labels, cfg: RAurcConfig | None = None,
                base_loss: BaseLoss = cross_entropy) -> LossGrad:
    """``(1 - lam) * mean(loss) + lam * mc_aurc_loss``."""
    cfg = cfg or RAurcConfig()
    p2 = np.atleast_2d(np.asarray(p, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = p2.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if cfg.lam == 0.0:
        loss, dloss = _per_sample(base_loss, p2, y)
        return LossGrad(float(np.mean(loss)), dloss / n)
    aurc = mc_aurc_loss(p2, y, cfg.csf, cfg.softrank, base_loss)
    if cfg.lam == 1.0:
        return aurc
    loss, dloss = _per_sample(base_loss, p2, y)
    value = (1.0 - cfg.lam) * float(np.mean(loss)) + cfg.lam * aurc.value
    return LossGrad(value, (1.0 - cfg.lam) * dloss / n + cfg.lam * aurc.grad_p)


def mean_loss(base_loss: BaseLoss) -> Callable[[np.ndarray, np.ndarray], LossGrad]:
    """Turn a per-sample loss into a batch-mean loss."""
    def batch(p, labels):
        p2 = np.atleast_2d(np.asarray(p, dtype=np.float64))
        y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        loss, dloss = _per_sample(base_loss, p2, y)
        return LossGrad(float(np.mean(loss)), dloss / p2.shape[0])
    return batch


def make_batch_loss(name: str, gamma: float = 2.0, lam: float = 0.5, epsilon: float = 0.05,
                    csf=CsfKind.MSP):
    """Batch loss by CLI name: ``xe``, ``focal``, ``fl53``, ``invfocal``, ``aurc`` or ``raurc``."""
    name = name.lower()
    if name == "xe":
        return mean_loss(cross_entropy)
    if name == "focal":
        cfg = FocusConfig(gamma)
        return mean_loss(lambda p, y: focal(p, y, cfg))
    if name == "fl53":
        return mean_loss(focal_fl53)
    if name == "invfocal":
        cfg = FocusConfig(gamma)
        return mean_loss(lambda p, y: inverse_focal(p, y, cfg))
    if name in ("aurc", "raurc"):
        cfg = RAurcConfig(lam=1.0 if name == "aurc" else lam, csf=csf,
                          softrank=SoftRankConfig(epsilon))
        return lambda p, y: r_aurc_loss(p, y, cfg)
    raise ValueError(f"unknown loss {name!r}")


def focal_weight(p, gamma):
    return (1.0 - np.asarray(p, dtype=np.float64)) ** gamma


def inverse_focal_weight(p, gamma):
    return (1.0 + np.asarray(p, dtype=np.float64)) ** gamma


def aurc_weight(u):
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return -np.log1p(-u)


def weight_curves(gamma: float, grid) -> dict[str, np.ndarray]:
    """Raw and max-normalised focal, inverse focal and AURC weights on ``grid``.

    The AURC weight diverges at 1; such points are ``inf`` and excluded from
    its normaliser.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0 or grid.min() < 0 or grid.max() > 1:
        raise ValueError("grid must be a non-empty vector inside [0, 1]")
    out = {
        "p": grid,
        "focal": focal_weight(grid, gamma),
        "inverse_focal": inverse_focal_weight(grid, gamma),
        "aurc": aurc_weight(grid),
    }
    for key in ("focal", "inverse_focal", "aurc"):
        finite = out[key][np.isfinite(out[key])]
        top = finite.max() if finite.size else 0.0
        out[f"{key}_norm"] = out[key] / top if top > 0 else np.zeros_like(grid)
    return out
