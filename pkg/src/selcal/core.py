"""Shared array conventions, softmax, argmax predictions and prediction I/O.

Batches are plain ``numpy`` float64 arrays: logits and probabilities are
``(n, k)`` matrices, labels are ``(n,)`` integer vectors with 0-based class
indices.  The ``as_*`` helpers validate and return read-only copies.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

PROB_FLOOR = 1e-12
SIMPLEX_ATOL = 1e-9


class PredictionFileError(ValueError):
    """A prediction dump could not be parsed or violates its schema."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def as_logits(values) -> np.ndarray:
    z = np.array(values, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 2:
        raise ValueError(f"logits must be an n x k matrix with n >= 1, k >= 2; got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite entries")
    return _frozen(z)


def as_probs(values) -> np.ndarray:
    p = np.array(values, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError(f"probabilities must be an n x k matrix; got shape {p.shape}")
    if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > SIMPLEX_ATOL:
        raise ValueError("probability rows must sum to 1")
    return _frozen(p)


def as_labels(values, k: int) -> np.ndarray:
    y = np.array(values)
    if y.ndim == 0:
        y = y[None]
    if y.ndim != 1:
        raise ValueError("labels must be a vector")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.round(y)):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    return _frozen(y)


def clamp_probs(p):
    """Clip probabilities into ``[PROB_FLOOR, 1]`` before taking logs."""
    return np.clip(p, PROB_FLOOR, 1.0)


def softmax(logits) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting each row's maximum."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input contains non-finite entries")
    squeeze = z.ndim == 1
    z = np.atleast_2d(z)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if squeeze else p


def softmax_backward(p, grad_p) -> np.ndarray:
    """Pull a gradient w.r.t. probabilities back to the logits.

    For ``p = softmax(z)`` the Jacobian is ``diag(p) - p p^T``, so the
    vector-Jacobian product is ``p * (g - <g, p>)`` per row.
    """
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(grad_p, dtype=np.float64)
    return p * (g - np.sum(g * p, axis=-1, keepdims=True))


def argmax_predict(p) -> np.ndarray:
    """Predicted class per row; ties go to the smallest index."""
    # np.argmax returns the first occurrence of the maximum
    return np.argmax(np.atleast_2d(p), axis=1)


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def empirical_error(p, labels) -> float:
    """Fraction of rows whose argmax prediction differs from the label."""
    p = np.atleast_2d(p)
    labels = np.asarray(labels)
    if p.shape[0] != labels.shape[0]:
        raise ValueError("probabilities and labels disagree on n")
    return float(np.mean(argmax_predict(p) != labels))


def load_records(path) -> list[tuple[int, dict]]:
    """Read ``(line number, object)`` pairs from a JSONL file, skipping blank lines."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PredictionFileError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise PredictionFileError(f"{path}:{lineno}: record is not an object")
            records.append((lineno, rec))
    return records


def _parse_predictions(path):
    records = load_records(path)
    if not records:
        raise PredictionFileError(f"{path}: no records")
    rows, probs, labels = [], [], []
    k = None
    for lineno, rec in records:
        if "logits" not in rec or "label" not in rec:
            raise PredictionFileError(f"{path}:{lineno}: record needs 'logits' and 'label'")
        z = rec["logits"]
        if not isinstance(z, list) or not all(isinstance(v, (int, float)) for v in z):
            raise PredictionFileError(f"{path}:{lineno}: 'logits' must be an array of numbers")
        if k is None:
            k = len(z)
            if k < 2:
                raise PredictionFileError(f"{path}:{lineno}: need at least 2 classes")
        elif len(z) != k:
            raise PredictionFileError(f"{path}:{lineno}: expected {k} logits, got {len(z)}")
        y = rec["label"]
        if isinstance(y, bool) or not isinstance(y, int):
            raise PredictionFileError(f"{path}:{lineno}: 'label' must be an integer")
        if not 0 <= y < k:
            raise PredictionFileError(f"{path}:{lineno}: label {y} outside [0, {k})")
        rows.append(z)
        labels.append(y)
        probs.append(rec.get("probs"))
    try:
        logits = as_logits(rows)
    except ValueError as exc:
        raise PredictionFileError(f"{path}: {exc}") from None
    return logits, as_labels(labels, k), probs


def load_predictions(path):
    """Load ``(logits, labels)`` from a prediction dump, preserving file order."""
    logits, labels, _ = _parse_predictions(path)
    return logits, labels


def load_prediction_probs(path):
    """Load ``(probs, labels)``.

    Records may carry an optional ``probs`` array (written by the
    calibration maps, whose outputs can contain exact zeros); it takes
    precedence over ``softmax(logits)`` when every record has one.
    """
    logits, labels, probs = _parse_predictions(path)
    if all(p is not None for p in probs):
        try:
            return as_probs(probs), labels
        except ValueError as exc:
            raise PredictionFileError(f"{path}: {exc}") from None
    return softmax(logits), labels


def prediction_records(logits, labels, probs=None) -> list[dict]:
    out = []
    for i, (z, y) in enumerate(zip(np.asarray(logits), np.asarray(labels))):
        rec = {"logits": [float(v) for v in z], "label": int(y)}
        if probs is not None:
            rec["probs"] = [float(v) for v in probs[i]]
        out.append(rec)
    return out


def write_text_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_jsonl(path, records) -> None:
    write_text_atomic(path, "".join(json.dumps(r) + "\n" for r in records))
