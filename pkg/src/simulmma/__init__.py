"""Monotonic multihead attention with language-model future information.

Desk-scale simultaneous translation: tiny MMA-IL models, an n-gram LM
supplying next-token predictions, streaming decoding and latency metrics.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
