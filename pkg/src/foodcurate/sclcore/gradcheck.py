"""Central finite-difference verification of the analytic gradients.

Checks two composites on random unit-norm instances: the contrastive loss
gradient w.r.t. the projection rows, and the cross-entropy-of-softmax
gradient w.r.t. the logits.  Relative error is measured as
max |analytic - numeric| / max(1, |numeric|).
"""

from __future__ import annotations

import numpy as np

from .losses import cross_entropy, cross_entropy_logits_grad, scl_loss, scl_loss_grad
from .ops import normalize_rows, one_hot, softmax

FD_STEP = 1e-5
REL_TOL = 1e-4


def finite_difference(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_scl_grad(
    n_rows: int = 8, n_cols: int = 4, temperature: float = 0.1, seed: int = 0
) -> float:
    rng = np.random.default_rng(seed)
    s = normalize_rows(rng.normal(size=(n_rows, n_cols)))
    labels = rng.integers(0, 2, size=n_rows)
    # every anchor needs a positive: pair up by construction
    labels = np.repeat(labels[: n_rows // 2], 2)
    analytic = scl_loss_grad(s, labels, temperature)
    numeric = finite_difference(lambda m: scl_loss(m, labels, temperature), s.copy())
    return max_relative_error(analytic, numeric)


def check_cross_entropy_grad(n_rows: int = 6, n_classes: int = 5, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(n_rows, n_classes))
    y = one_hot(rng.integers(0, n_classes, size=n_rows), n_classes)
    analytic = cross_entropy_logits_grad(logits, y)
    numeric = finite_difference(lambda q: cross_entropy(softmax(q), y), logits.copy())
    return max_relative_error(analytic, numeric)


def run_gradcheck(n_instances: int = 20, seed: int = 7, verbose: bool = False) -> bool:
    """Run both checks over n random instances; True iff all pass REL_TOL."""
    rng = np.random.default_rng(seed)
    worst_scl = 0.0
    worst_ce = 0.0
    for _ in range(n_instances):
        t = float(rng.choice([0.05, 0.1, 0.5, 1.0]))
        worst_scl = max(worst_scl, check_scl_grad(temperature=t, seed=int(rng.integers(1 << 31))))
        worst_ce = max(worst_ce, check_cross_entropy_grad(seed=int(rng.integers(1 << 31))))
    ok = worst_scl < REL_TOL and worst_ce < REL_TOL
    if verbose:
        print(f"contrastive-loss gradient: max relative error {worst_scl:.3e}")
        print(f"cross-entropy gradient:    max relative error {worst_ce:.3e}")
        print("gradcheck OK" if ok else f"gradcheck FAILED (tolerance {REL_TOL})")
    return ok
