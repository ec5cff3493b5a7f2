"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``SIMULMMA_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy fallback is used. Both backends expose the same
three functions with identical semantics.
"""

import os

import numpy as np

from . import _fallback

_force_pure = os.environ.get("SIMULMMA_PURE_PYTHON", "") not in ("", "0")

if _force_pure:
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"


def get_backend(name: str | None = None):
    """Return the kernel module named ``"compiled"`` or ``"python"`` (default: active)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels  # type: ignore[attr-defined]

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    try:
        from . import _kernels  # type: ignore[attr-defined]  # noqa: F401
    except ImportError:
        return False
    return True


def alignment_forward(p: np.ndarray, mask: np.ndarray):
    return _impl.alignment_forward(np.ascontiguousarray(p, dtype=np.float64),
                                   np.ascontiguousarray(mask, dtype=np.float64))


def alignment_backward(p, mask, r, grad_alpha):
    c = np.ascontiguousarray
    return _impl.alignment_backward(c(p, dtype=np.float64), c(mask, dtype=np.float64),
                                    c(r, dtype=np.float64), c(grad_alpha, dtype=np.float64))


def sample_paths(p: np.ndarray, u: np.ndarray):
    return _impl.sample_paths(np.ascontiguousarray(p, dtype=np.float64),
                              np.ascontiguousarray(u, dtype=np.float64))
