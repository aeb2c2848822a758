"""Hard and soft ascending ranks.

The soft rank of ``s`` with strength ``epsilon`` is the Euclidean projection
of ``s / epsilon`` onto the permutahedron spanned by ``(1, 2, ..., n)``.  It
is computed in ``O(n log n)``: sort, then a decreasing isotonic regression by
pool-adjacent-violators.  The largest score receives the largest rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SoftRankConfig:
    epsilon: float = 0.05

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class SoftRankResult:
    """Soft ranks plus the PAV block structure needed for the VJP.

    ``order`` lists original indices sorted by decreasing ``s / epsilon``;
    ``blocks`` are half-open ``(start, stop)`` ranges of positions in that
    order that were pooled together.
    """

    ranks: np.ndarray
    order: np.ndarray
    blocks: tuple[tuple[int, int], ...]
    epsilon: float


def _check_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError("scores must be a vector")
    if np.any(np.isnan(s)):
        raise ValueError("scores contain NaN")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s


def hard_rank_ascending(scores) -> np.ndarray:
    """Ranks 1..n in ascending score order; ties keep original index order."""
    s = _check_scores(scores)
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.int64)
    ranks[order] = np.arange(1, s.size + 1)
    return ranks


def isotonic_decreasing(y):
    """L2 isotonic regression onto non-increasing sequences (PAV).

    Returns the fitted values and the pooled blocks as half-open ranges.
    """
    y = np.asarray(y, dtype=np.float64)
    starts: list[int] = []
    sums: list[float] = []
    counts: list[int] = []
    for i, yi in enumerate(y):
        starts.append(i)
        sums.append(float(yi))
        counts.append(1)
        # pool while the previous block's mean is below the last block's mean
        while len(sums) > 1 and sums[-2] * counts[-1] < sums[-1] * counts[-2]:
            s, c = sums.pop(), counts.pop()
            starts.pop()
            sums[-1] += s
            counts[-1] += c
    fit = np.empty_like(y)
    blocks = []
    for start, s, c in zip(starts, sums, counts):
        fit[start:start + c] = s / c
        blocks.append((start, start + c))
    return fit, tuple(blocks)


def soft_rank_ascending(scores, cfg: SoftRankConfig | None = None) -> SoftRankResult:
    cfg = cfg or SoftRankConfig()
    s = _check_scores(scores)
    n = s.size
    if n < 1:
        raise ValueError("need at least one score")
    z = s / cfg.epsilon if math.isfinite(cfg.epsilon) else np.zeros(n)
    order = np.argsort(-z, kind="stable")
    w = np.arange(n, 0, -1, dtype=np.float64)
    fit, blocks = isotonic_decreasing(z[order] - w)
    ranks = np.empty(n)
    ranks[order] = z[order] - fit
    return SoftRankResult(ranks=ranks, order=order, blocks=blocks, epsilon=cfg.epsilon)


def soft_rank_vjp(scores, cfg: SoftRankConfig | None, upstream, result: SoftRankResult | None = None):
    """Return ``upstream^T J`` with ``J`` the Jacobian of the soft ranks.

    Inside the region where the PAV blocks are fixed the projection is
    ``z - B z + const`` in sorted coordinates, ``B`` averaging within each
    block, so ``J = (I - P B P^T) / epsilon``.  At block boundaries the
    blocks found by PAV are used (a one-sided derivative).
    """
    if result is None:
        result = soft_rank_ascending(scores, cfg)
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape != result.ranks.shape:
        raise ValueError(f"upstream has shape {u.shape}, expected {result.ranks.shape}")
    if not math.isfinite(result.epsilon):
        return np.zeros_like(u)
    us = u[result.order]
    pooled = np.empty_like(us)
    for start, stop in result.blocks:
        pooled[start:stop] = us[start:stop].mean()
    out = np.empty_like(u)
    out[result.order] = us - pooled
    return out / result.epsilon


def normalized_soft_rank(scores, cfg: SoftRankConfig | None = None, n_total: int | None = None):
    """Soft ranks divided by ``n + 1``; every entry lies strictly in (0, 1)."""
    res = soft_rank_ascending(scores, cfg)
    n = res.ranks.size
    if n_total is not None and n_total != n:
        raise ValueError(f"n_total={n_total} does not match {n} scores")
    return res.ranks / (n + 1)
