"""Small numeric building blocks: finiteness checks, row normalization, softmax."""

from __future__ import annotations

import numpy as np


class SclError(ValueError):
    """Raised on non-finite inputs, zero-norm rows, and contract violations."""


def check_finite(a: np.ndarray, name: str = "input") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise SclError(f"{name} contains NaN or Inf")
    return a


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm; zero rows are an error."""
    m = check_finite(m, "matrix")
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = int(np.where(norms[:, 0] == 0.0)[0][0])
        raise SclError(f"row {bad} has zero norm")
    return m / norms


def normalize_rows_backward(raw: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of row normalization w.r.t. the unnormalized rows.

    For y = x / |x|:  dL/dx = (dL/dy - y (y . dL/dy)) / |x|.
    """
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    y = raw / norms
    dot = np.sum(y * grad_out, axis=1, keepdims=True)
    return (grad_out - y * dot) / norms


def softmax(q: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax over the last axis, safe for huge logits."""
    q = check_finite(q, "logits")
    shifted = q - q.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise SclError(f"labels outside [0, {n_classes})")
    out = np.zeros((labels.shape[0], n_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out
