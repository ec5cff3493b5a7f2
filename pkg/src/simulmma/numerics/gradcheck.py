"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import NumericError, Tensor


def finite_difference_gradient(f: Callable[[np.ndarray], float], params, eps: float = 1e-6) -> np.ndarray:
    """Estimate the gradient of a scalar function by central differences.

    ``f`` receives an array with the shape of ``params`` and returns a scalar.
    ``params`` may be a :class:`Tensor` or an array; it is never modified.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    base = np.array(params.data if isinstance(params, Tensor) else params, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        hi = float(f(base))
        flat[k] = orig - eps
        lo = float(f(base))
        flat[k] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite function value at coordinate {k}")
        out[k] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a|| + ||n||, tiny): symmetric, safe near zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-300)
    if np.linalg.norm(a - n) == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)
