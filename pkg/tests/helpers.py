"""Shared test utilities: numeric differentiation and error measures."""

import numpy as np


def central_diff(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at vector x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi.flat[i] += eps
        lo.flat[i] -= eps
        g.flat[i] = (f(hi) - f(lo)) / (2.0 * eps)
    return g


def rel_err(got, want):
    """Relative error between two arrays, guarded against a zero reference."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(np.linalg.norm(want), 1e-12)
    return np.linalg.norm(got - want) / denom


def disagreement(x):
    """Frobenius distance of agent rows from their mean."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.linalg.norm(x - x.mean(axis=0, keepdims=True)))
