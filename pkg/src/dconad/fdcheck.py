"""Central finite differences, used as the independent oracle for every backward rule."""

from __future__ import annotations

from typing import Callable

import numpy as np

FD_STEP = 1e-5


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place and restoring it."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation scaled by the larger of the two gradients' max magnitudes.

    Entry-wise ratios blow up on entries that are zero up to rounding, so the
    scale is taken over the whole array.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)
