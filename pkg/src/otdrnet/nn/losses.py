"""Scalar losses and their gradients with respect to the prediction."""

import numpy as np

BCE_EPS = 1e-7


def bce(p, y):
    """Mean binary cross-entropy with ``p`` clamped to ``[eps, 1 - eps]``."""
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def bce_grad(p, y):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    g = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / p.size
    # The clamp is flat outside the interval.
    return np.where((p < BCE_EPS) | (p > 1.0 - BCE_EPS), 0.0, g)


def mse(pred, target):
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(d * d)) if d.size else 0.0


def mse_grad(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    if pred.size == 0:
        return np.zeros_like(pred)
    return 2.0 * (pred - np.asarray(target, dtype=np.float64)) / pred.size
