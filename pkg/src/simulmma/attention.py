"""Monotonic energies, infinite-lookback attention and future-information fusion.

Functions accept unbatched inputs (``h_states [S, d_model]``,
``y_prev [d_model]``) as described per operation; the ``*_batched`` helpers
are what the model uses on ``[B, H, T, S]`` tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    clamp,
    l2_normalize_rows,
    layer_norm,
    masked_fill,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    tsum,
)

MODULATION_MODES = ("additive", "multiplicative")
P_MIN = 1e-6
P_MAX = 1.0 - 1e-6


class ConfigurationError(ValueError):
    pass


@dataclass
class MonotonicHeadParams:
    W_K: Tensor  # [d_model, d_k]
    W_Q: Tensor  # [d_model, d_k]
    energy_bias: Tensor | float = -1.0

    def __post_init__(self):
        self.W_K, self.W_Q = as_tensor(self.W_K), as_tensor(self.W_Q)
        if self.W_K.shape != self.W_Q.shape:
            raise ShapeError(f"monotonic head: W_K {self.W_K.shape} and W_Q {self.W_Q.shape} differ")

    @property
    def d_k(self) -> int:
        return self.W_K.shape[1]


@dataclass
class FutureEnergyParams:
    W_K: Tensor  # [d_model, d]
    W_Q: Tensor  # [d_model, d]

    def __post_init__(self):
        self.W_K, self.W_Q = as_tensor(self.W_K), as_tensor(self.W_Q)
        if self.W_K.shape != self.W_Q.shape:
            raise ShapeError(f"future energy: W_K {self.W_K.shape} and W_Q {self.W_Q.shape} differ")

    @property
    def d(self) -> int:
        return self.W_K.shape[1]


@dataclass
class FFNParams:
    W1: Tensor  # [d, ffn]
    b1: Tensor
    W2: Tensor  # [ffn, d]
    b2: Tensor
    ln_gain: Tensor | None = None
    ln_bias: Tensor | None = None


def head_dim(d_model: int, heads: int) -> int:
    if heads < 1 or d_model % heads:
        raise ConfigurationError(f"d_model={d_model} is not divisible by heads={heads}")
    return d_model // heads


def _scaled_dot(h_states, query, W_K, W_Q, scale_dim: int) -> Tensor:
    h_states, query = as_tensor(h_states), as_tensor(query)
    if h_states.ndim != 2:
        raise ShapeError(f"energy: h_states must be [S, d_model], got {h_states.shape}")
    if query.shape != (h_states.shape[1],):
        raise ShapeError(f"energy: incompatible shapes {h_states.shape} and {query.shape}")
    keys = matmul(h_states, W_K)  # [S, k]
    q = matmul(reshape(query, (1, -1)), W_Q)  # [1, k]
    e = matmul(keys, reshape(q, (-1, 1)))  # [S, 1]
    return scale(reshape(e, (-1,)), 1.0 / np.sqrt(scale_dim))


def monotonic_energy(h_states, y_prev, params: MonotonicHeadParams) -> Tensor:
    """Scaled dot-product read/write energy of one head over every source state."""
    return add(_scaled_dot(h_states, y_prev, params.W_K, params.W_Q, params.d_k), params.energy_bias)


def soft_energy(h_states, y_prev, params: MonotonicHeadParams, t_i: int | None = None) -> Tensor:
    """Soft-attention energies over states ``1..t_i``; ``params`` are the separate soft projections."""
    h_states = as_tensor(h_states)
    S = h_states.shape[0]
    t_i = S if t_i is None else t_i
    if not 1 <= t_i <= S:
        raise IndexError(f"t_i={t_i} outside 1..{S}")
    return _scaled_dot(h_states[:t_i], y_prev, params.W_K, params.W_Q, params.d_k)


def future_energy(h_states, y_tilde, params: FutureEnergyParams) -> Tensor:
    """Energy between source states and the enriched future-token vector, scaled by sqrt(d)."""
    return _scaled_dot(h_states, y_tilde, params.W_K, params.W_Q, params.d)


def milk_beta(alpha, u) -> Tensor:
    """Infinite-lookback weights for ``alpha, u`` of shape ``[..., S]``.

    ``beta[j] = sum_{k>=j} alpha[k] * softmax(u[:k+1])[j]``. Each prefix softmax
    subtracts its own running maximum, so large energies cannot overflow.
    """
    alpha, u = as_tensor(alpha), as_tensor(u)
    S = u.shape[-1]
    after = np.triu(np.ones((S, S), dtype=bool), 1)  # j > k
    scores = reshape(u, u.shape[:-1] + (1, S)) + np.zeros((S, 1))
    prefix = softmax_rows(masked_fill(scores, after, -np.inf))  # [..., k, j]
    beta = matmul(reshape(alpha, alpha.shape[:-1] + (1, S)), prefix)
    return reshape(beta, beta.shape[:-2] + (S,))


def milk_attention(alpha_row, u, h_states) -> tuple[Tensor, Tensor]:
    """Return ``(context, beta)`` for one target step."""
    alpha_row, u, h_states = as_tensor(alpha_row), as_tensor(u), as_tensor(h_states)
    if alpha_row.shape != u.shape or u.shape[0] != h_states.shape[0]:
        raise ShapeError(f"milk_attention: alpha {alpha_row.shape}, u {u.shape}, h {h_states.shape}")
    beta = milk_beta(alpha_row, u)
    context = matmul(reshape(beta, (1, -1)), h_states)
    return reshape(context, (-1,)), beta


def subtoken_summary(subtoken_embeddings: Sequence) -> Tensor:
    """Normalised sum of sub-token vectors (zero sum maps to zero)."""
    if len(subtoken_embeddings) == 0:
        raise ValueError("subtoken_summary needs at least one embedding; substitute the null embedding")
    total = subtoken_embeddings[0]
    for emb in subtoken_embeddings[1:]:
        total = add(total, emb)
    return l2_normalize_rows(total)


def ffn_enrich(y_tilde_prev, params: FFNParams) -> Tensor:
    """``LayerNorm(y + W2 relu(W1 y + b1) + b2)`` on the last axis."""
    y = as_tensor(y_tilde_prev)
    squeeze = y.ndim == 1
    x = reshape(y, (1, -1)) if squeeze else y
    hidden = relu(add(matmul(x, params.W1), params.b1))
    out = layer_norm(add(x, add(matmul(hidden, params.W2), params.b2)), params.ln_gain, params.ln_bias)
    return reshape(out, y.shape) if squeeze else out


def modulate(e, e_future, mode: str = "additive"):
    """Fuse the monotonic and future energies into a clamped selection probability."""
    if mode == "additive":
        z = add(e, e_future)
    elif mode == "multiplicative":
        z = mul(e, e_future)
    else:
        raise ConfigurationError(f"unknown modulation mode {mode!r}; expected one of {MODULATION_MODES}")
    out = clamp(sigmoid(z), P_MIN, P_MAX)
    if not isinstance(e, Tensor) and not isinstance(e_future, Tensor) and np.ndim(out.data) == 0:
        return float(out.data)
    return out


def lm_prediction_weight(e_future, e_output) -> float | None:
    """Norm ratio ``||e_future|| / ||e_output||``; ``None`` when the denominator is zero."""
    num = np.linalg.norm(np.asarray(getattr(e_future, "data", e_future), dtype=np.float64))
    den = np.linalg.norm(np.asarray(getattr(e_output, "data", e_output), dtype=np.float64))
    if den == 0.0:
        return None
    return float(num / den)


def mean_lm_prediction_weight(values) -> float:
    """Average of the defined ratios; 0.0 when none are defined."""
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else 0.0


def write_decision(p_tilde, threshold: float = 0.5) -> bool:
    """Write only when every layer/head probability strictly exceeds the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError(f"threshold must lie in (0, 1), got {threshold}")
    p = np.asarray(getattr(p_tilde, "data", p_tilde), dtype=np.float64)
    return bool(p.min() > threshold)


# -- batched helpers used by the model ----------------------------------------

def split_heads(x: Tensor, heads: int) -> Tensor:
    """``[B, N, H*dk] -> [B, H, N, dk]``."""
    B, N, D = x.shape
    return reshape(x, (B, N, heads, D // heads)).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    """``[B, H, N, dk] -> [B, N, H*dk]``."""
    B, H, N, dk = x.shape
    return reshape(x.transpose(0, 2, 1, 3), (B, N, H * dk))


def scaled_scores(q: Tensor, k: Tensor, dim: int) -> Tensor:
    """``q @ k^T / sqrt(dim)`` over the last two axes."""
    return scale(matmul(q, k.swapaxes(-1, -2)), 1.0 / np.sqrt(dim))


def summarize_future_batched(token_emb: Tensor, null_emb: Tensor, ids: np.ndarray,
                             sub_mask: np.ndarray, is_null: np.ndarray) -> Tensor:
    """Batched sub-token summary.

    ``ids``/``sub_mask`` are ``[B, T, M]`` sub-token ids and validity; rows
    flagged ``is_null`` (``[B, T]``) use the learned null embedding instead.
    """
    emb = token_emb[ids]  # [B, T, M, d]
    summed = tsum(mul(emb, sub_mask[..., None].astype(np.float64)), axis=2)
    keep = (~is_null)[..., None].astype(np.float64)
    fused = add(mul(summed, keep), mul(reshape(null_emb, (1, 1, -1)), 1.0 - keep))
    return l2_normalize_rows(fused)
