"""Central finite differences for verifying analytic gradients."""

import numpy as np


def numerical_gradient(f, x, h=1e-5):
    """Gradient of scalar ``f()`` with respect to array ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-12):
    """``||a - n|| / (||a|| + ||n||)`` in the Euclidean norm."""
    a = np.ravel(np.asarray(analytic, dtype=np.float64))
    n = np.ravel(np.asarray(numeric, dtype=np.float64))
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
