"""Selective-classification and calibration metrics on finite samples."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import argmax_predict, empirical_error, one_hot
from .softrank import hard_rank_ascending


class BinKind(str, enum.Enum):
    EQUAL_WIDTH = "ew"
    EQUAL_MASS = "em"
    SINGLETON = "singleton"


@dataclass(frozen=True)
class BinningScheme:
    kind: BinKind = BinKind.EQUAL_WIDTH
    m: int = 15

    def __post_init__(self):
        object.__setattr__(self, "kind", BinKind(self.kind))
        if self.m < 1:
            raise ValueError("bin count must be >= 1")

    def assign(self, values) -> np.ndarray:
        """Bin id per value; ids are only meaningful for grouping."""
        v = np.asarray(values, dtype=np.float64)
        if self.kind is BinKind.EQUAL_WIDTH:
            return equal_width_bin(v, self.m)
        if self.kind is BinKind.EQUAL_MASS:
            ids = np.empty(v.size, dtype=np.int64)
            order = np.argsort(v, kind="stable")
            for b, chunk in enumerate(np.array_split(order, min(self.m, max(v.size, 1)))):
                ids[chunk] = b
            return ids
        return np.unique(v, return_inverse=True)[1].reshape(-1)


EQUAL_WIDTH_15 = BinningScheme(BinKind.EQUAL_WIDTH, 15)
SINGLETON = BinningScheme(BinKind.SINGLETON, 1)


def equal_width_bin(values, m: int) -> np.ndarray:
    """Right-closed bins ``(b/m, (b+1)/m]``; the first bin also holds 0."""
    edges = np.linspace(0.0, 1.0, m + 1)
    return np.clip(np.searchsorted(edges, values, side="left") - 1, 0, m - 1)


@dataclass(frozen=True)
class RiskCoveragePoint:
    coverage: float
    selective_risk: float


def _pair(losses, scores):
    losses = np.asarray(losses, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if losses.shape != scores.shape or losses.ndim != 1:
        raise ValueError("losses and scores must be vectors of equal length")
    if losses.size == 0:
        raise ValueError("empty input")
    return losses, scores


def selective_risks(losses, scores) -> np.ndarray:
    """Running mean loss over samples taken in decreasing score order.

    Ties are accepted in original index order.
    """
    losses, scores = _pair(losses, scores)
    order = np.argsort(-scores, kind="stable")
    return np.cumsum(losses[order]) / np.arange(1, losses.size + 1)


def risk_coverage_curve(losses, scores) -> list[RiskCoveragePoint]:
    risks = selective_risks(losses, scores)
    n = risks.size
    return [RiskCoveragePoint((i + 1) / n, float(r)) for i, r in enumerate(risks)]


def aurc_curve(losses, scores) -> float:
    return float(np.mean(selective_risks(losses, scores)))


def mc_aurc(losses, scores) -> float:
    """Rank-weighted AURC estimate with hard ascending ranks."""
    losses, scores = _pair(losses, scores)
    n = losses.size
    ranks = hard_rank_ascending(scores)
    return float(np.mean(-np.log1p(-ranks / (n + 1)) * losses))


def _binned_gap(values, hits, ids) -> float:
    """``sum_b n_b |mean(hits) - mean(values)|`` over the bins in ``ids``."""
    counts = np.bincount(ids)
    gap = np.bincount(ids, weights=hits) - np.bincount(ids, weights=values)
    # |acc_b - conf_b| * n_b == |sum(hits) - sum(values)| within the bin
    return float(np.sum(np.abs(gap[counts > 0])))


def top_label(p, labels, pred=None):
    """Top-label confidences and correctness indicators.

    ``pred`` overrides the argmax decision (the confidence stays the row max).
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    labels = np.asarray(labels)
    if pred is None:
        pred = argmax_predict(p)
    conf = p.max(axis=1)
    return conf, (np.asarray(pred) == labels).astype(np.float64)


def binned_ece(p, labels, scheme: BinningScheme = EQUAL_WIDTH_15, pred=None) -> float:
    conf, hits = top_label(p, labels, pred)
    return _binned_gap(conf, hits, scheme.assign(conf)) / conf.size


def binned_cwece(p, labels, scheme: BinningScheme = EQUAL_WIDTH_15) -> float:
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    n, k = p.shape
    y = one_hot(labels, k)
    total = 0.0
    for c in range(k):
        total += _binned_gap(p[:, c], y[:, c], scheme.assign(p[:, c])) / n
    return total / k


@dataclass(frozen=True)
class BoundsCheck:
    sup_ece: float
    sup_cwece: float
    bound: float
    ece_ok: bool
    cwece_ok: bool

    @property
    def ok(self) -> bool:
        return self.ece_ok and self.cwece_ok


def sup_binning_bounds_check(p, labels) -> BoundsCheck:
    """Compare singleton-binning ECE and cwECE against ``err / k``.

    The cwECE inequality is strict whenever the error rate is positive.
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    k = p.shape[1]
    err = empirical_error(p, labels)
    bound = err / k
    sup_ece = binned_ece(p, labels, SINGLETON)
    sup_cwece = binned_cwece(p, labels, SINGLETON)
    cw_ok = sup_cwece > bound if err > 0 else sup_cwece >= bound
    return BoundsCheck(sup_ece, sup_cwece, bound, sup_ece >= bound, cw_ok)


def brier(p, labels) -> float:
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    return float(np.mean(np.sum((p - one_hot(labels, p.shape[1])) ** 2, axis=1)))


@dataclass(frozen=True)
class ReliabilityBins:
    lo: np.ndarray
    hi: np.ndarray
    count: np.ndarray
    conf: np.ndarray  # NaN where count == 0
    acc: np.ndarray   # NaN where count == 0


def reliability_bins(p, labels, m: int = 10) -> ReliabilityBins:
    if m < 1:
        raise ValueError("bin count must be >= 1")
    conf, hits = top_label(p, labels)
    ids = equal_width_bin(conf, m)
    count = np.bincount(ids, minlength=m)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.bincount(ids, weights=conf, minlength=m) / count
        acc = np.bincount(ids, weights=hits, minlength=m) / count
    mean_conf[count == 0] = np.nan
    acc[count == 0] = np.nan
    edges = np.linspace(0.0, 1.0, m + 1)
    return ReliabilityBins(edges[:-1], edges[1:], count, mean_conf, acc)
