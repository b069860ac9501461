"""Weighted cross-entropy, prediction entropy and the combined semi-supervised objective."""
from __future__ import annotations

from typing import Optional

import numpy as np

PROB_FLOOR = 1e-12


def cross_entropy(probs, onehot, weight: float = 1.0) -> float:
    """``weight * -(y . log q)`` with log clamped at ``PROB_FLOOR``."""
    q = np.asarray(probs, dtype=np.float64)
    y = np.asarray(onehot, dtype=np.float64)
    return float(weight * -(y @ np.log(np.maximum(q, PROB_FLOOR))))


def entropy(probs) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    s = np.asarray(probs, dtype=np.float64)
    return float(-np.sum(_xlogx(s)))


def _xlogx(s):
    return np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)), 0.0)


def total_loss(source_probs, labels, weights, target_probs=None, lam: float = 0.0) -> float:
    """Mean weighted CE over the source batch plus ``lam`` times mean target entropy.

    ``weights`` is the per-class weight vector. The entropy term is dropped when
    the target batch is empty or ``lam == 0``.
    """
    return objective(source_probs, labels, weights, target_probs, lam)[0]


def objective(source_probs, labels, weights, target_probs=None, lam: float = 0.0):
    """Loss value and its gradient with respect to the source and target logits."""
    q = np.asarray(source_probs, dtype=np.float64)
    if q.ndim != 2 or len(q) == 0:
        raise ValueError("source batch must be a nonempty (B, C) array")
    y = np.asarray(labels, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)[y]
    rows = np.arange(len(y))
    qy = q[rows, y]
    ce = -w * np.log(np.maximum(qy, PROB_FLOOR))
    loss = ce.mean()
    d_src = q.copy()
    d_src[rows, y] -= 1.0
    # clamped log has zero derivative
    d_src *= (w * (qy >= PROB_FLOOR) / len(y))[:, None]

    d_tgt: Optional[np.ndarray] = None
    if target_probs is not None and len(target_probs) and lam != 0:
        s = np.asarray(target_probs, dtype=np.float64)
        xlogx = _xlogx(s)
        h = -xlogx.sum(axis=1)
        loss = loss + lam * h.mean()
        # dH/dz_k = -(s_k log s_k + s_k H)
        d_tgt = -(xlogx + s * h[:, None]) * (lam / len(s))
    return float(loss), d_src, d_tgt
