"""Supervised contrastive loss, cross-entropy, and their analytic gradients.

The contrastive loss for anchor i over unit-norm projection rows S with
temperature T is

    l_i = -(1/|P(i)|) * sum_{p in P(i)} log( exp(S_i.S_p / T)
                                              / sum_{k != i} exp(S_i.S_k / T) )

where P(i) holds every other row sharing anchor i's label, and the total loss
sums l_i over all rows.  Each softmax ratio is <= 1, so every l_i >= 0, and
when all rows coincide l_i = log(n - 1) regardless of T.  All exponentials go
through max subtraction so small temperatures stay finite.
"""

from __future__ import annotations

import numpy as np

from .ops import SclError, check_finite, softmax

LOG_CLAMP = 1e-12


def _masked_exp(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """exp(z - rowmax) with the diagonal excluded (self-similarity never competes)."""
    zm = z.copy()
    np.fill_diagonal(zm, -np.inf)
    row_max = zm.max(axis=1, keepdims=True)
    return np.exp(zm - row_max), row_max


def positive_sets(labels: np.ndarray) -> list[np.ndarray]:
    """For each anchor i, the indices sharing its label, excluding i itself."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    out = []
    for i in range(n):
        pos = np.where(labels == labels[i])[0]
        out.append(pos[pos != i])
    return out


def _logits(s: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise SclError(f"temperature must be > 0, got {temperature}")
    s = check_finite(s, "projections")
    if s.ndim != 2 or s.shape[0] < 2:
        raise SclError(f"need a 2-D matrix with >= 2 rows, got shape {s.shape}")
    return (s @ s.T) / temperature


def scl_loss(s: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    """Total supervised contrastive loss over all anchors (a sum, not a mean)."""
    z = _logits(s, temperature)
    n = z.shape[0]
    positives = positive_sets(labels)
    if any(p.size == 0 for p in positives):
        bad = next(i for i, p in enumerate(positives) if p.size == 0)
        raise SclError(f"anchor {bad} has an empty positive set")
    # log-denominator per anchor via max-subtraction over the off-diagonal row
    exp_z, row_max = _masked_exp(z)
    log_den = np.log(exp_z.sum(axis=1)) + row_max[:, 0]
    total = 0.0
    for i in range(n):
        pos = positives[i]
        total += -float(np.mean(z[i, pos] - log_den[i]))
    return total


def scl_loss_grad(s: np.ndarray, labels: np.ndarray, temperature: float) -> np.ndarray:
    """Analytic gradient of scl_loss w.r.t. each projection entry.

    With g[i, j] = softmax_j(z_i over k != i) - [j in P(i)] / |P(i)| for
    j != i and zero diagonal, the gradient is (G + G^T) S / T.
    """
    z = _logits(s, temperature)
    n = z.shape[0]
    positives = positive_sets(labels)
    if any(p.size == 0 for p in positives):
        bad = next(i for i, p in enumerate(positives) if p.size == 0)
        raise SclError(f"anchor {bad} has an empty positive set")
    exp_z, _ = _masked_exp(z)
    # rows sum to 1 over k != i; the diagonal is exactly zero by construction
    g = exp_z / exp_z.sum(axis=1, keepdims=True)
    for i in range(n):
        pos = positives[i]
        g[i, pos] -= 1.0 / pos.size
    return (g + g.T) @ s / temperature


def cross_entropy(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy of predicted rows against one-hot targets.

    Logs are clamped at 1e-12 so a confidently wrong row stays finite.
    """
    y_hat = check_finite(y_hat, "predictions")
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise SclError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    return float(-np.sum(y * np.log(np.maximum(y_hat, LOG_CLAMP))) / y_hat.shape[0])


def cross_entropy_logits_grad(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of cross_entropy(softmax(logits), y) w.r.t. the logits.

    The softmax/cross-entropy composite collapses to (softmax - y) / n.
    """
    logits = check_finite(logits, "logits")
    y = np.asarray(y, dtype=np.float64)
    if logits.shape != y.shape:
        raise SclError(f"shape mismatch: {logits.shape} vs {y.shape}")
    return (softmax(logits) - y) / logits.shape[0]
