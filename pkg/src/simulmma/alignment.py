"""Expected monotonic alignment and hard read/write paths.

Three routes to the same marginal: a division-free recurrence (compiled
kernel), a parallel log-cumulative-product form built from differentiable
tensor ops, and exhaustive enumeration of every Bernoulli decision configuration.
The enumeration is the oracle for the other two.

Alignment mass that reads past the last source position is kept as an
explicit per-row ``residual`` rather than renormalised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import (
    Tensor,
    as_tensor,
    concat,
    cumsum_rows,
    exp,
    log,
    masked_fill,
    matmul,
    mul,
    reshape,
)
from .numerics.tensor import _node

P_MIN = 1e-6
P_MAX = 1.0 - 1e-6
BRUTE_FORCE_MAX_CELLS = 16


class AlignmentSizeError(ValueError):
    """Instance too large for exhaustive enumeration."""


@dataclass(frozen=True)
class SelectionProbabilities:
    p: np.ndarray

    @classmethod
    def from_array(cls, p) -> "SelectionProbabilities":
        arr = np.asarray(p, dtype=np.float64)
        if arr.ndim != 2 or 0 in arr.shape:
            raise ValueError(f"selection probabilities must be a non-empty T x S matrix, got {arr.shape}")
        return cls(clamp_probabilities(arr))


@dataclass(frozen=True)
class ExpectedAlignment:
    alpha: np.ndarray
    residual: np.ndarray


@dataclass(frozen=True)
class HardAlignmentPath:
    t: np.ndarray  # 1-based attended source index per target step
    forced: np.ndarray  # True where the source ran out and a write was forced


def clamp_probabilities(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), P_MIN, P_MAX)


def _as_probs(p) -> np.ndarray:
    if isinstance(p, SelectionProbabilities):
        return p.p
    return SelectionProbabilities.from_array(p).p


def _with_residual(alpha: np.ndarray) -> ExpectedAlignment:
    return ExpectedAlignment(alpha=alpha, residual=1.0 - alpha.sum(axis=-1))


def expected_alignment_recurrent(p) -> ExpectedAlignment:
    """Row-by-row recurrence; row 0 starts from a one-hot at the first source position."""
    probs = _as_probs(p)
    T, S = probs.shape
    alpha, _ = kernels.alignment_forward(probs[None], np.ones((1, S)))
    return _with_residual(alpha[0])


def parallel_alignment(p: Tensor) -> Tensor:
    """Differentiable closed form over rows, vectorised over source positions.

    With ``L`` the exclusive cumulative sum of ``log(1 - p_i)``, the ratio of
    cumulative products ``prod_{l=k}^{j-1} (1 - p_il)`` equals
    ``exp(L_j - L_k)``; each row is then ``p_i * (alpha_{i-1} @ M_i)`` with
    ``M_i[k, j] = exp(L_j - L_k)`` on ``k <= j``. No division is involved, so
    long runs of high ``p`` cannot underflow a divisor. Accepts leading batch
    dimensions ``[..., T, S]``; ``p`` should already be clamped.
    """
    p = as_tensor(p)
    T, S = p.shape[-2], p.shape[-1]
    below = np.tril(np.ones((S, S), dtype=bool), -1)  # k > j
    prev = np.zeros(p.shape[:-2] + (1, S))
    prev[..., 0, 0] = 1.0
    prev = Tensor(prev)
    rows = []
    for i in range(T):
        p_i = p[..., i, :]
        logq = log(1.0 - p_i)
        excl = cumsum_rows(logq) - logq
        diff = reshape(excl, excl.shape[:-1] + (1, S)) - reshape(excl, excl.shape + (1,))
        ratios = exp(masked_fill(diff, below, -np.inf))
        prev = mul(reshape(p_i, p_i.shape[:-1] + (1, S)), matmul(prev, ratios))
        rows.append(prev)
    return concat(rows, axis=-2)


def expected_alignment_parallel(p) -> ExpectedAlignment:
    alpha = parallel_alignment(Tensor(_as_probs(p)))
    return _with_residual(alpha.data)


def monotonic_alignment(p, mask=None) -> Tensor:
    """Fused expected alignment with an analytic adjoint, batched over ``[N..., T, S]``.

    ``mask`` (shape ``[N..., S]``) zeroes alignment on padded source positions;
    because the recurrence runs left to right, padding on the right never
    changes the values at real positions.
    """
    p = as_tensor(p)
    lead = p.shape[:-2]
    T, S = p.shape[-2], p.shape[-1]
    flat_p = p.data.reshape((-1, T, S))
    if mask is None:
        flat_m = np.ones((flat_p.shape[0], S))
    else:
        flat_m = np.broadcast_to(np.asarray(mask, dtype=np.float64), lead + (S,)).reshape(-1, S)
    alpha, r = kernels.alignment_forward(flat_p, flat_m)

    def rule(g):
        gp = kernels.alignment_backward(flat_p, flat_m, r, g.reshape(-1, T, S))
        return (gp.reshape(p.shape),)

    return _node(alpha.reshape(p.shape), (p,), rule)


def brute_force_alignment(p) -> ExpectedAlignment:
    """Exact expectation by enumerating all 2**(T*S) Bernoulli outcomes.

    Each configuration fixes every z[i, j]; the read/write automaton is run on
    it and its probability mass is credited to the attended cells. Paths that
    read past the end of the source contribute nothing further (residual).
    """
    probs = _as_probs(p)
    T, S = probs.shape
    n = T * S
    if n > BRUTE_FORCE_MAX_CELLS:
        raise AlignmentSizeError(f"T*S = {n} exceeds enumeration limit {BRUTE_FORCE_MAX_CELLS}")
    codes = np.arange(2**n, dtype=np.int64)
    z = ((codes[:, None] >> np.arange(n)) & 1).astype(bool).reshape(-1, T, S)
    weight = np.prod(np.where(z, probs[None], 1.0 - probs[None]).reshape(-1, n), axis=1)
    alpha = np.zeros((T, S))
    alive = np.ones(len(codes), dtype=bool)
    start = np.zeros(len(codes), dtype=np.int64)
    for i in range(T):
        found = np.zeros(len(codes), dtype=bool)
        t = np.full(len(codes), -1)
        for j in range(S):
            hit = alive & ~found & (start <= j) & z[:, i, j]
            t[hit] = j
            found |= hit
            alpha[i, j] = weight[hit].sum()
        alive &= found
        start = t
    return _with_residual(alpha)


def sample_hard_alignments(p, n: int, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Run ``n`` independent read/write automata; returns 0-based ``t`` and ``forced``."""
    probs = _as_probs(p)
    rng = np.random.default_rng(rng_seed)
    u = rng.random((n,) + probs.shape)
    t, forced = kernels.sample_paths(probs, u)
    return t, forced.astype(bool)


def sample_hard_alignment(p, rng_seed: int) -> HardAlignmentPath:
    t, forced = sample_hard_alignments(p, 1, rng_seed)
    return HardAlignmentPath(t=t[0] + 1, forced=forced[0])


def empirical_alignment(p, n: int, rng_seed: int) -> np.ndarray:
    """Monte-Carlo estimate of the expected alignment.

    A path contributes to row ``i`` only while no forced write has happened
    in rows ``<= i``; forced writes correspond to residual mass.
    """
    probs = _as_probs(p)
    T, S = probs.shape
    t, forced = sample_hard_alignments(probs, n, rng_seed)
    survived = ~np.logical_or.accumulate(forced, axis=1)
    freq = np.zeros((T, S))
    for i in range(T):
        freq[i] = np.bincount(t[survived[:, i], i], minlength=S) / n
    return freq
