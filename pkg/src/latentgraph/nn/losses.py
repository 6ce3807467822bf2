"""Numerically stable losses returning ``(loss, dloss/dlogits)``.

Rows are averaged with ``row_weights`` (default uniform, summing to 1); for
the multilabel loss the columns of a row are averaged as well.
"""

from __future__ import annotations

import numpy as np


def _weights(n: int, row_weights) -> np.ndarray:
    if row_weights is None:
        return np.full(n, 1.0 / n) if n else np.zeros(0)
    w = np.asarray(row_weights, dtype=np.float64).reshape(-1)
    if len(w) != n:
        raise ValueError(f"row_weights has {len(w)} entries for {n} rows")
    return w


def bce_with_logits(logits, targets, row_weights=None) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on raw logits (log-sum-exp form)."""
    x = np.asarray(logits)
    y = np.asarray(targets, dtype=x.dtype)
    if x.shape != y.shape:
        raise ValueError(f"bce_with_logits: logits {x.shape} vs targets {y.shape}")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("bce_with_logits: targets must be 0 or 1")
    n, k = x.shape
    w = _weights(n, row_weights).astype(x.dtype)[:, None] / k
    per = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return float((w * per).sum()), (w * (sig - y)).astype(x.dtype)


def softmax_cross_entropy(logits, class_ids, row_weights=None) -> tuple[float, np.ndarray]:
    """Mean of ``-log softmax(logits)[class]`` per row."""
    x = np.asarray(logits)
    c = np.asarray(class_ids, dtype=np.int64).reshape(-1)
    n, k = x.shape
    if len(c) != n:
        raise ValueError(f"softmax_cross_entropy: {len(c)} labels for {n} rows")
    if np.any((c < 0) | (c >= k)):
        raise IndexError(f"softmax_cross_entropy: class id outside [0, {k})")
    w = _weights(n, row_weights).astype(x.dtype)
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    per = lse - shifted[rows, c]
    probs = np.exp(shifted - lse[:, None])
    probs[rows, c] -= 1.0
    return float((w * per).sum()), (w[:, None] * probs).astype(x.dtype)
