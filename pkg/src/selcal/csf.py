"""Confidence score functions g(p) and their gradients w.r.t. p.

All functions accept a single probability vector ``(k,)`` or a batch
``(n, k)`` and return a scalar or ``(n,)`` scores respectively.
"""

from __future__ import annotations

import enum

import numpy as np

from .core import argmax_predict, clamp_probs


class CsfKind(str, enum.Enum):
    MSP = "msp"
    SOFTMAX_MARGIN = "margin"
    NEGATIVE_ENTROPY = "negentropy"
    NEG_LOSS_ORACLE = "negloss"

    @classmethod
    def parse(cls, value) -> "CsfKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown CSF {value!r}; expected one of {names}") from None


def _top_two(p):
    """Indices of the top and runner-up entries, using the argmax tie rule."""
    top = argmax_predict(p)
    masked = p.copy()
    masked[np.arange(p.shape[0]), top] = -np.inf
    return top, np.argmax(masked, axis=1)


def csf_score(kind, p, loss=None):
    kind = CsfKind.parse(kind)
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    if kind is CsfKind.MSP:
        out = p2.max(axis=1)
    elif kind is CsfKind.SOFTMAX_MARGIN:
        if p2.shape[1] < 2:
            raise ValueError("softmax margin needs k >= 2")
        top, second = _top_two(p2)
        rows = np.arange(p2.shape[0])
        out = p2[rows, top] - p2[rows, second]
    elif kind is CsfKind.NEGATIVE_ENTROPY:
        q = clamp_probs(p2)
        out = np.sum(p2 * np.log(q), axis=1)
    else:
        if loss is None:
            raise ValueError("the negative-loss oracle CSF needs per-sample losses")
        out = -np.atleast_1d(np.asarray(loss, dtype=np.float64))
        if out.shape != (p2.shape[0],):
            raise ValueError("loss must have one entry per probability row")
    return float(out[0]) if single else out


def csf_gradient(kind, p, loss_grad=None):
    """d g / d p, same shape as ``p``.

    MSP and margin use the argmax tie rule to pick a subgradient.  For the
    negative-loss oracle the caller passes the loss gradient and gets its
    negation back.
    """
    kind = CsfKind.parse(kind)
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    rows = np.arange(p2.shape[0])
    g = np.zeros_like(p2)
    if kind is CsfKind.MSP:
        g[rows, argmax_predict(p2)] = 1.0
    elif kind is CsfKind.SOFTMAX_MARGIN:
        top, second = _top_two(p2)
        g[rows, top] = 1.0
        g[rows, second] = -1.0
    elif kind is CsfKind.NEGATIVE_ENTROPY:
        g = np.log(clamp_probs(p2)) + 1.0
    else:
        if loss_grad is None:
            raise ValueError("the negative-loss oracle CSF needs the loss gradient")
        g = -np.asarray(loss_grad, dtype=np.float64).reshape(p2.shape)
    return g[0] if single else g
