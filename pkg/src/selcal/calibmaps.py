"""Post-hoc calibration maps.

``ece_optimal_map`` and ``cwece_optimal_map`` use a confidence score and a
threshold to sharpen accepted rows to one-hot vectors and to soften
rejected rows.  Temperature scaling rescales logits by a scalar fitted by
grid search on the equal-width ECE.
"""

from __future__ import annotations

import numpy as np

from .core import argmax_predict, softmax
from .metrics import EQUAL_WIDTH_15, BinningScheme, binned_ece


def _split(p, scores, tau):
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if p.shape[1] < 2:
        raise ValueError("calibration maps need k >= 2")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (p.shape[0],):
        raise ValueError("need one score per row")
    return p, argmax_predict(p), scores >= tau


def _set_top(p, top, rows, new_top):
    """Set ``p[row, top]`` to ``new_top`` and rescale the other entries to keep the row sum."""
    out = p.copy()
    idx = np.flatnonzero(rows)
    old = p[idx, top[idx]]
    rest = 1.0 - old
    target = 1.0 - new_top
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rest > 0, target / rest, 0.0)
    out[idx] *= scale[:, None]
    # an all-mass-on-top row has nothing to rescale; spread evenly instead
    flat = idx[rest <= 0]
    if flat.size:
        out[flat] = (target[rest <= 0] / (p.shape[1] - 1))[:, None]
    out[idx, top[idx]] = new_top
    return out


def ece_optimal_map(p, scores, tau: float) -> np.ndarray:
    """Accepted rows (score >= tau) become one-hot at their top class;
    rejected rows become uniform, the only simplex point whose maximum is 1/k.
    """
    p, top, accept = _split(p, scores, tau)
    k = p.shape[1]
    out = np.full_like(p, 1.0 / k)
    acc = np.flatnonzero(accept)
    out[acc] = 0.0
    out[acc, top[acc]] = 1.0
    return out


def cwece_optimal_map(p, scores, tau: float) -> np.ndarray:
    """Accepted rows become one-hot; rejected rows have their top mass capped
    at ``min(1/2, top)`` with the removed mass spread proportionally.
    """
    p, top, accept = _split(p, scores, tau)
    reject = ~accept
    new_top = np.minimum(0.5, p[np.arange(p.shape[0]), top])
    out = _set_top(p, top, reject, new_top[reject])
    acc = np.flatnonzero(accept)
    out[acc] = 0.0
    out[acc, top[acc]] = 1.0
    return out


def temperature_grid(lo: float = 0.5, hi: float = 3.0, step: float = 0.01) -> np.ndarray:
    if not (lo > 0 and step > 0):
        raise ValueError("temperature grid needs lo > 0 and step > 0")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    if count < 1:
        raise ValueError("empty temperature grid")
    # rounding keeps grid points such as 1.0 exact
    return np.round(lo + step * np.arange(count), 12)


def apply_temperature(logits, t: float) -> np.ndarray:
    if not t > 0:
        raise ValueError("temperature must be positive")
    return softmax(np.asarray(logits, dtype=np.float64) / t)


def fit_temperature(logits, labels, grid_lo: float = 0.5, grid_hi: float = 3.0, step: float = 0.01,
                    scheme: BinningScheme = EQUAL_WIDTH_15) -> float:
    """Grid point minimising binned ECE of ``softmax(logits / T)``; ties pick the smallest T."""
    grid = temperature_grid(grid_lo, grid_hi, step)
    eces = np.array([binned_ece(apply_temperature(logits, t), labels, scheme) for t in grid])
    return float(grid[int(np.argmin(eces))])
