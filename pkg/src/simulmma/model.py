"""Tiny encoder-decoder with monotonic infinite-lookback decoder attention.

Training runs teacher-forced over padded batches with the expected
(soft) alignment; inference runs one target step at a time with hard head
positions (:class:`IncrementalDecoder`). With ``future_info`` enabled, every
decoder step also receives the summary of an LM-predicted next token, which
is enriched per layer and adds a head-shared future energy to every head's
monotonic energy before the sigmoid.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attention as att
from .alignment import P_MAX, P_MIN, monotonic_alignment
from .lm import FuturePrediction
from .numerics import (
    ContractError,
    Tensor,
    add,
    clamp,
    concat,
    embedding,
    l2_normalize_rows,
    layer_norm,
    log_softmax_rows,
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
from .vocab import BOS_ID, EOS, EOS_ID, PAD_ID, SPLITTERS, UNK_ID, Vocabulary

CHECKPOINT_MAGIC = b"SMMACKPT"
CHECKPOINT_VERSION = 1


class VersionError(ValueError):
    """Checkpoint format or configuration mismatch."""


@dataclass
class ModelConfig:
    d_model: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 2
    ffn_dim: int = 64
    future_ffn_dim: int = 64
    future_info: bool = False
    modulation: str = "additive"
    lm_tokenizer: str = "shared"
    lambda_latency: float = 0.0
    lambda_var: float = 0.0
    energy_bias_init: float = -1.0
    energy_noise: float = 4.0
    pre_decision_ratio: int = 1
    max_positions: int = 256
    seed: int = 0

    def validate(self) -> "ModelConfig":
        att.head_dim(self.d_model, self.heads)
        if self.modulation not in att.MODULATION_MODES:
            raise att.ConfigurationError(f"unknown modulation {self.modulation!r}")
        if self.lm_tokenizer not in SPLITTERS:
            raise att.ConfigurationError(f"unknown lm_tokenizer {self.lm_tokenizer!r}")
        if not (self.lambda_latency == 0.0 or 0.0 < self.lambda_latency <= 1.0):
            raise att.ConfigurationError(f"lambda_latency must be 0 or in (0, 1], got {self.lambda_latency}")
        if self.lambda_var != 0.0:
            raise att.ConfigurationError("lambda_var is fixed at 0 for infinite-lookback models")
        if self.pre_decision_ratio < 1:
            raise att.ConfigurationError("pre_decision_ratio must be >= 1")
        if self.energy_noise < 0:
            raise att.ConfigurationError("energy_noise must be >= 0")
        return self

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in known})


def sinusoid_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    dim = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, dim / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d // 2])
    return table


def init_params(cfg: ModelConfig, src_vocab: int, tgt_vocab: int) -> dict[str, Tensor]:
    """Seeded initialisation. Future parameters come from a separate stream so the
    shared parameters are identical with and without future information."""
    cfg.validate()
    d, f, H = cfg.d_model, cfg.ffn_dim, cfg.heads
    rng = np.random.default_rng([cfg.seed, 10])
    params: dict[str, np.ndarray] = {}

    def dense(name, n_in, n_out):
        params[name] = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))

    def norm(prefix):
        params[f"{prefix}.g"] = np.ones(d)
        params[f"{prefix}.b"] = np.zeros(d)

    params["src_emb"] = rng.normal(0.0, 1.0, size=(src_vocab, d))
    params["tgt_emb"] = rng.normal(0.0, 1.0, size=(tgt_vocab, d))
    for l in range(cfg.enc_layers):
        p = f"enc.{l}"
        norm(f"{p}.ln1")
        for m in ("wq", "wk", "wv", "wo"):
            dense(f"{p}.attn.{m}", d, d)
        norm(f"{p}.ln2")
        dense(f"{p}.ffn.w1", d, f)
        params[f"{p}.ffn.b1"] = np.zeros(f)
        dense(f"{p}.ffn.w2", f, d)
        params[f"{p}.ffn.b2"] = np.zeros(d)
    norm("enc.ln")
    for l in range(cfg.dec_layers):
        p = f"dec.{l}"
        norm(f"{p}.ln1")
        for m in ("wq", "wk", "wv", "wo"):
            dense(f"{p}.self.{m}", d, d)
        norm(f"{p}.ln2")
        for m in ("mono_wq", "mono_wk", "soft_wq", "soft_wk", "wv", "wo"):
            dense(f"{p}.mma.{m}", d, d)
        params[f"{p}.mma.bias"] = np.full(H, cfg.energy_bias_init)
        norm(f"{p}.ln3")
        dense(f"{p}.ffn.w1", d, f)
        params[f"{p}.ffn.b1"] = np.zeros(f)
        dense(f"{p}.ffn.w2", f, d)
        params[f"{p}.ffn.b2"] = np.zeros(d)
    norm("dec.ln")
    dense("out.w", d, tgt_vocab)
    params["out.b"] = np.zeros(tgt_vocab)

    if cfg.future_info:
        frng = np.random.default_rng([cfg.seed, 11])
        ff = cfg.future_ffn_dim
        params["fut.null"] = frng.normal(0.0, 1.0, size=d)
        for l in range(cfg.dec_layers):
            p = f"fut.{l}"
            params[f"{p}.w1"] = frng.normal(0.0, 1.0 / np.sqrt(d), size=(d, ff))
            params[f"{p}.b1"] = np.zeros(ff)
            params[f"{p}.w2"] = frng.normal(0.0, 1.0 / np.sqrt(ff), size=(ff, d))
            params[f"{p}.b2"] = np.zeros(d)
            params[f"{p}.ln.g"] = np.ones(d)
            params[f"{p}.ln.b"] = np.zeros(d)
            params[f"{p}.wq"] = frng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
            params[f"{p}.wk"] = frng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d))
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}


FUTURE_ENERGY_KEYS = ("wq", "wk")


# -- batches -----------------------------------------------------------------

@dataclass
class TrainingExample:
    source: list[str]
    target: list[str]  # without the end-of-sentence marker
    future: list[FuturePrediction] | None = None  # one per target token + end marker

    def __post_init__(self):
        if self.future is not None:
            if len(self.future) != len(self.target) + 1:
                raise ContractError("future predictions must cover every target token plus the end marker")
            if not self.future[-1].is_null:
                raise ContractError("the last future prediction must be null")


@dataclass
class Batch:
    src: np.ndarray  # [B, S] ids
    src_len: np.ndarray  # [B] in encoder states
    tgt_in: np.ndarray  # [B, T]
    tgt_out: np.ndarray  # [B, T]
    tgt_len: np.ndarray  # [B]
    fut_ids: np.ndarray | None = None  # [B, T, M]
    fut_mask: np.ndarray | None = None  # [B, T, M]
    fut_null: np.ndarray | None = None  # [B, T]


def expand_source(tokens: Sequence[str], ratio: int) -> list[str]:
    """Pseudo-speech: each source token becomes ``ratio`` consecutive encoder frames."""
    return [t for t in tokens for _ in range(ratio)]


def source_units(tokens: Sequence[str], ratio: int) -> list[str]:
    """Encoder input units: expanded tokens plus one end-of-source marker.

    The marker gives the final (end-of-sentence) target step a state to align
    to, so stopping behaves the same under soft training and hard inference.
    """
    return expand_source(tokens, ratio) + [EOS]


def future_subtoken_ids(pred: FuturePrediction | None, vocab: Vocabulary, splitter) -> list[int] | None:
    if pred is None or pred.is_null or pred.token is None:
        return None
    if pred.token == EOS:
        return [EOS_ID]
    return vocab.encode(splitter(pred.token))


def make_batch(examples: Sequence[TrainingExample], src_vocab: Vocabulary, tgt_vocab: Vocabulary,
               cfg: ModelConfig) -> Batch:
    B = len(examples)
    srcs = [src_vocab.encode(source_units(ex.source, cfg.pre_decision_ratio)) for ex in examples]
    tgts = [tgt_vocab.encode(ex.target) for ex in examples]
    S = max(len(s) for s in srcs)
    T = max(len(t) for t in tgts) + 1
    src = np.full((B, S), PAD_ID, dtype=np.int64)
    tgt_in = np.full((B, T), PAD_ID, dtype=np.int64)
    tgt_out = np.full((B, T), PAD_ID, dtype=np.int64)
    for b, (s, t) in enumerate(zip(srcs, tgts)):
        src[b, : len(s)] = s
        tgt_in[b, : len(t) + 1] = [BOS_ID] + t
        tgt_out[b, : len(t) + 1] = t + [EOS_ID]
    batch = Batch(src, np.array([len(s) for s in srcs]), tgt_in, tgt_out, np.array([len(t) + 1 for t in tgts]))
    if cfg.future_info:
        splitter = SPLITTERS[cfg.lm_tokenizer]
        rows = []
        for ex in examples:
            if ex.future is None:
                raise att.ConfigurationError("future_info is enabled but an example has no predictions")
            # step 0 (start token) carries the null prediction; step i uses entry i-1
            steps = [None] + [future_subtoken_ids(p, tgt_vocab, splitter) for p in ex.future[:-1]]
            rows.append(steps)
        M = max(1, max(len(s) for r in rows for s in r if s is not None) if any(
            s is not None for r in rows for s in r) else 1)
        ids = np.zeros((B, T, M), dtype=np.int64)
        mask = np.zeros((B, T, M), dtype=bool)
        null = np.ones((B, T), dtype=bool)
        for b, steps in enumerate(rows):
            for i, sub in enumerate(steps):
                if sub is not None:
                    ids[b, i, : len(sub)] = sub
                    mask[b, i, : len(sub)] = True
                    null[b, i] = False
        batch.fut_ids, batch.fut_mask, batch.fut_null = ids, mask, null
    return batch


def decision_points(n_states: int, ratio: int) -> np.ndarray:
    """0-based state indices after which a read/write decision is taken."""
    if ratio < 1:
        raise att.ConfigurationError("pre-decision ratio must be >= 1")
    ends = np.arange(ratio - 1, n_states, ratio)
    if n_states % ratio:
        ends = np.append(ends, n_states - 1)
    return ends.astype(np.int64)


# -- forward pieces --------------------------------------------------------------

def _self_attention(params, prefix: str, x: Tensor, heads: int, causal: np.ndarray) -> Tensor:
    q = att.split_heads(matmul(x, params[f"{prefix}.wq"]), heads)
    k = att.split_heads(matmul(x, params[f"{prefix}.wk"]), heads)
    v = att.split_heads(matmul(x, params[f"{prefix}.wv"]), heads)
    scores = masked_fill(att.scaled_scores(q, k, q.shape[-1]), causal, -np.inf)
    out = att.merge_heads(matmul(softmax_rows(scores), v))
    return matmul(out, params[f"{prefix}.wo"])


def _ffn(params, prefix: str, x: Tensor) -> Tensor:
    hidden = relu(add(matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return add(matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _ln(params, prefix: str, x: Tensor) -> Tensor:
    return layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _future_params(params, l: int) -> att.FFNParams:
    p = f"fut.{l}"
    return att.FFNParams(params[f"{p}.w1"], params[f"{p}.b1"], params[f"{p}.w2"], params[f"{p}.b2"],
                         params[f"{p}.ln.g"], params[f"{p}.ln.b"])


def _causal(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n), dtype=bool), 1)


def encode_ids(params, cfg: ModelConfig, src: np.ndarray) -> Tensor:
    """Causally masked encoder over ``[B, S]`` ids; state ``j`` sees only ``x_{<=j}``."""
    B, S = src.shape
    x = add(embedding(params["src_emb"], src), sinusoid_table(S, cfg.d_model)[None])
    mask = _causal(S)
    for l in range(cfg.enc_layers):
        p = f"enc.{l}"
        x = add(x, _self_attention(params, f"{p}.attn", _ln(params, f"{p}.ln1", x), cfg.heads, mask))
        x = add(x, _ffn(params, f"{p}.ffn", _ln(params, f"{p}.ln2", x)))
    return _ln(params, "enc.ln", x)


@dataclass
class ForwardOutput:
    log_probs: Tensor  # [B, T, V]
    alphas: list[Tensor]  # per layer [B, H, T, S] on encoder states
    energies: list[Tensor]  # per layer monotonic energy without bias [B, H, T, G]
    future_energies: list[Tensor | None]  # per layer [B, 1, T, G]
    probs: list[Tensor]  # per layer modulated selection probability [B, H, T, G]
    dp_mask: np.ndarray = field(default=None)  # [B, G]


def decoder_forward(params, cfg: ModelConfig, batch: Batch, enc: Tensor,
                    rng: np.random.Generator | None = None) -> ForwardOutput:
    """Teacher-forced decoder. With ``rng`` and ``cfg.energy_noise > 0``, Gaussian noise is
    added to the pre-sigmoid energies, which pushes selection probabilities towards 0/1
    so that the hard stopping rule used at inference matches training."""
    B, T = batch.tgt_in.shape
    S = enc.shape[1]
    H, dk, d = cfg.heads, cfg.d_k, cfg.d_model
    x = add(embedding(params["tgt_emb"], batch.tgt_in), sinusoid_table(T, d)[None])
    causal = _causal(T)

    # decision points: selection matrix [B, G, S] from group ends to states
    ratio = cfg.pre_decision_ratio
    dps = [decision_points(int(n), ratio) for n in batch.src_len]
    G = max(len(p) for p in dps)
    dp_mask = np.zeros((B, G))
    select = None
    if ratio > 1:
        sel = np.zeros((B, G, S))
        for b, pts in enumerate(dps):
            sel[b, np.arange(len(pts)), pts] = 1.0
            dp_mask[b, : len(pts)] = 1.0
        select = Tensor(sel)
    else:
        for b, n in enumerate(batch.src_len):
            dp_mask[b, :n] = 1.0
    src_mask = np.zeros((B, S))
    for b, n in enumerate(batch.src_len):
        src_mask[b, :n] = 1.0

    y_tilde = None
    if cfg.future_info:
        y_tilde = att.summarize_future_batched(params["tgt_emb"], params["fut.null"], batch.fut_ids,
                                               batch.fut_mask, batch.fut_null)

    out = ForwardOutput(None, [], [], [], [], dp_mask)
    for l in range(cfg.dec_layers):
        p = f"dec.{l}"
        x = add(x, _self_attention(params, f"{p}.self", _ln(params, f"{p}.ln1", x), H, causal))
        q = _ln(params, f"{p}.ln2", x)
        enc_g = matmul(select, enc) if select is not None else enc  # states at decision points
        mq = att.split_heads(matmul(q, params[f"{p}.mma.mono_wq"]), H)
        mk = att.split_heads(matmul(enc_g, params[f"{p}.mma.mono_wk"]), H)
        e = att.scaled_scores(mq, mk, dk)  # [B, H, T, G]
        e_biased = add(e, reshape(params[f"{p}.mma.bias"], (1, H, 1, 1)))
        ef = None
        if cfg.future_info:
            y_tilde = att.ffn_enrich(y_tilde, _future_params(params, l))
            fq = matmul(y_tilde, params[f"fut.{l}.wq"])
            fk = matmul(enc_g, params[f"fut.{l}.wk"])
            ef = reshape(att.scaled_scores(fq, fk, d), (B, 1, T, G))
            z = add(e_biased, ef) if cfg.modulation == "additive" else mul(e_biased, ef)
        else:
            z = e_biased
        if rng is not None and cfg.energy_noise > 0:
            z = add(z, rng.normal(0.0, cfg.energy_noise, size=z.shape))
        prob = clamp(sigmoid(z), P_MIN, P_MAX)
        alpha_g = monotonic_alignment(prob, dp_mask[:, None, :])
        alpha = matmul(alpha_g, select[:, None]) if select is not None else alpha_g

        sq = att.split_heads(matmul(q, params[f"{p}.mma.soft_wq"]), H)
        sk = att.split_heads(matmul(enc, params[f"{p}.mma.soft_wk"]), H)
        u = att.scaled_scores(sq, sk, dk)
        beta = att.milk_beta(alpha, u)
        v = att.split_heads(matmul(enc, params[f"{p}.mma.wv"]), H)
        ctx = matmul(att.merge_heads(matmul(beta, v)), params[f"{p}.mma.wo"])
        x = add(x, ctx)
        x = add(x, _ffn(params, f"{p}.ffn", _ln(params, f"{p}.ln3", x)))
        out.alphas.append(alpha)
        out.energies.append(e)
        out.future_energies.append(ef)
        out.probs.append(prob)
    logits = add(matmul(_ln(params, "dec.ln", x), params["out.w"]), params["out.b"])
    out.log_probs = log_softmax_rows(logits)
    return out


def latency_loss(alpha: Tensor, src_len: np.ndarray, tgt_len: np.ndarray) -> Tensor:
    """Differentiable expected average lagging per sentence, ``[B]``.

    ``alpha`` is ``[B, T, S]`` (already averaged over layers/heads). Expected
    delay ``g_i = sum_j j * alpha_ij + S * residual_i`` with 1-based ``j``;
    loss ``= max(0, mean_i (g_i - (i-1) * S / T))`` over real target steps.
    """
    B, T, S = alpha.shape
    pos = np.arange(1, S + 1, dtype=np.float64)
    src = np.asarray(src_len, dtype=np.float64)
    tgt = np.asarray(tgt_len, dtype=np.float64)
    residual = 1.0 - tsum(alpha, axis=-1)  # [B, T]
    delay = add(tsum(mul(alpha, pos), axis=-1), mul(residual, src[:, None]))
    ideal = np.arange(T)[None, :] * (src / tgt)[:, None]
    tmask = (np.arange(T)[None, :] < tgt[:, None]).astype(np.float64)
    lag = tsum(mul(delay - ideal, tmask / tgt[:, None]), axis=-1)
    return relu(lag)


def nll_per_sentence(log_probs: Tensor, tgt_out: np.ndarray, tgt_len: np.ndarray) -> Tensor:
    B, T, V = log_probs.shape
    onehot = np.zeros((B, T, V))
    onehot[np.arange(B)[:, None], np.arange(T)[None, :], tgt_out] = 1.0
    tmask = (np.arange(T)[None, :] < np.asarray(tgt_len)[:, None]).astype(np.float64)
    picked = tsum(mul(log_probs, onehot), axis=-1)
    return scale(tsum(mul(picked, tmask / np.asarray(tgt_len, dtype=np.float64)[:, None]), axis=-1), -1.0)


@dataclass
class LossParts:
    loss: Tensor
    nll: float
    latency: float
    lm_pw: float | None


class MMAModel:
    """Parameters + configuration + vocabularies; all computation is functional."""

    def __init__(self, cfg: ModelConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                 params: dict[str, Tensor] | None = None):
        self.cfg = cfg.validate()
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.params = params if params is not None else init_params(cfg, len(src_vocab), len(tgt_vocab))
        self.splitter = SPLITTERS[cfg.lm_tokenizer]

    # -- training ------------------------------------------------------------------
    def encode(self, source_prefix: Sequence[str] | np.ndarray) -> Tensor:
        """Encoder states ``[S', d_model]`` for one (already expanded) source prefix."""
        ids = np.asarray(source_prefix if isinstance(source_prefix, np.ndarray)
                         else self.src_vocab.encode(source_prefix), dtype=np.int64)
        if ids.size == 0:
            raise ContractError("encode needs a non-empty prefix")
        return reshape(encode_ids(self.params, self.cfg, ids[None]), (ids.size, self.cfg.d_model))

    def batch(self, examples: Sequence[TrainingExample]) -> Batch:
        return make_batch(examples, self.src_vocab, self.tgt_vocab, self.cfg)

    def forward(self, batch: Batch, rng: np.random.Generator | None = None) -> ForwardOutput:
        enc = encode_ids(self.params, self.cfg, batch.src)
        return decoder_forward(self.params, self.cfg, batch, enc, rng)

    def loss(self, batch: Batch, lambda_latency: float | None = None,
             rng: np.random.Generator | None = None) -> LossParts:
        lam = self.cfg.lambda_latency if lambda_latency is None else lambda_latency
        fwd = self.forward(batch, rng)
        nll = nll_per_sentence(fwd.log_probs, batch.tgt_out, batch.tgt_len)
        alpha_mean = fwd.alphas[0].mean(axis=1)
        for a in fwd.alphas[1:]:
            alpha_mean = add(alpha_mean, a.mean(axis=1))
        alpha_mean = scale(alpha_mean, 1.0 / len(fwd.alphas))
        lat = latency_loss(alpha_mean, batch.src_len, batch.tgt_len)
        total = add(nll, scale(lat, lam)) if lam else nll
        loss = scale(tsum(total), 1.0 / len(batch.src_len))
        return LossParts(loss, float(nll.data.mean()), float(lat.data.mean()), batch_lm_pw(fwd, batch))

    # -- persistence ----------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def clone(self) -> "MMAModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        cfg = ModelConfig.from_dict(self.cfg.to_dict())
        return MMAModel(cfg, self.src_vocab, self.tgt_vocab, params)

    def save(self, path: Path, extra: dict | None = None) -> None:
        save_checkpoint(path, self, extra)

    @classmethod
    def load(cls, path: Path) -> "MMAModel":
        return load_checkpoint(path)[0]


def batch_lm_pw(fwd: ForwardOutput, batch: Batch) -> float | None:
    """Mean ``||future energy|| / ||monotonic energy||`` over real (step, layer, head) rows."""
    if fwd.future_energies[0] is None:
        return None
    T = batch.tgt_in.shape[1]
    tmask = np.arange(T)[None, :] < batch.tgt_len[:, None]  # [B, T]
    gmask = fwd.dp_mask[:, None, None, :]
    ratios = []
    for e, ef in zip(fwd.energies, fwd.future_energies):
        num = np.sqrt(((ef.data * gmask) ** 2).sum(-1))  # [B, 1, T]
        den = np.sqrt(((e.data * gmask) ** 2).sum(-1))  # [B, H, T]
        ok = (den > 0) & tmask[:, None, :]
        ratio = np.where(ok, num / np.where(den > 0, den, 1.0), 0.0)
        ratios.append((ratio.sum(), ok.sum()))
    total = sum(r for r, _ in ratios)
    count = sum(c for _, c in ratios)
    return float(total / count) if count else None


# -- incremental inference -----------------------------------------------------------

@dataclass
class EncoderCache:
    """Per-layer key/value projections of the source states read so far."""

    states: np.ndarray  # [S, d]
    mono_k: list[np.ndarray]  # per layer [H, S, dk]
    soft_k: list[np.ndarray]
    values: list[np.ndarray]
    fut_k: list[np.ndarray | None]  # per layer [S, d]


@dataclass
class DecoderState:
    step: int = 0
    self_k: list[list[np.ndarray]] = field(default_factory=list)  # per layer rows [H, dk]
    self_v: list[list[np.ndarray]] = field(default_factory=list)
    positions: np.ndarray | None = None  # [L, H] committed head positions (state index)


@dataclass
class StepResult:
    log_probs: np.ndarray  # [V]
    p_tilde: np.ndarray  # [L, H] value used by the write rule
    positions: np.ndarray  # [L, H] attended state index
    found: np.ndarray  # [L, H] head stopped on its own (not forced/provisional)
    energies: list[np.ndarray]  # per layer [H, G] without bias
    future_energies: list[np.ndarray | None]  # per layer [G]
    alpha: list[np.ndarray]  # per layer [H, S] hard alignment rows
    context: list[np.ndarray]  # per layer [d]
    new_k: list[np.ndarray]
    new_v: list[np.ndarray]


class IncrementalDecoder:
    """One target step at a time over a growing source prefix (no gradients)."""

    def __init__(self, model: MMAModel):
        self.model = model
        self.cfg = model.cfg
        self.P = {k: v.data for k, v in model.params.items()}
        self._pos = sinusoid_table(self.cfg.max_positions, self.cfg.d_model)

    def init_state(self) -> DecoderState:
        L, H = self.cfg.dec_layers, self.cfg.heads
        return DecoderState(0, [[] for _ in range(L)], [[] for _ in range(L)], np.zeros((L, H), dtype=np.int64))

    def encoder_cache(self, enc_states: np.ndarray) -> EncoderCache:
        P, cfg = self.P, self.cfg
        S, H, dk = enc_states.shape[0], cfg.heads, cfg.d_k

        def heads(m):
            return (enc_states @ m).reshape(S, H, dk).transpose(1, 0, 2)

        mono, soft, vals, fut = [], [], [], []
        for l in range(cfg.dec_layers):
            p = f"dec.{l}.mma"
            mono.append(heads(P[f"{p}.mono_wk"]))
            soft.append(heads(P[f"{p}.soft_wk"]))
            vals.append(heads(P[f"{p}.wv"]))
            fut.append(enc_states @ P[f"fut.{l}.wk"] if cfg.future_info else None)
        return EncoderCache(enc_states, mono, soft, vals, fut)

    def future_vector(self, subtoken_ids: list[int] | None) -> np.ndarray:
        P = self.P
        if subtoken_ids is None:
            total = P["fut.null"]
        else:
            total = P["tgt_emb"][subtoken_ids].sum(axis=0)
        return l2_normalize_rows(Tensor(total[None])).data[0]

    def step(self, state: DecoderState, prev_token: int, future: list[int] | None, cache: EncoderCache,
             dps: np.ndarray, final: bool, threshold: float) -> StepResult:
        """Run all decoder layers for the next target position.

        Each head searches its first decision point at or after its committed
        position whose probability exceeds ``threshold``. When none exists the
        head is provisional (attends to everything read) unless ``final``, in
        which case it is forced to the last source state.
        """
        P, cfg = self.P, self.cfg
        H, dk, d, L = cfg.heads, cfg.d_k, cfg.d_model, cfg.dec_layers
        S = cache.states.shape[0]
        if dps.size == 0 or dps[-1] >= S:
            raise ContractError(f"decision points {dps.tolist()} do not fit {S} source states")
        x = (P["tgt_emb"][prev_token] + self._pos[state.step])[None]  # [1, d]
        y_tilde = self.future_vector(future)[None] if cfg.future_info else None

        p_used = np.zeros((L, H))
        positions = np.zeros((L, H), dtype=np.int64)
        found = np.zeros((L, H), dtype=bool)
        energies, fenergies, alphas, contexts, new_k, new_v = [], [], [], [], [], []
        for l in range(L):
            pre = f"dec.{l}"
            a = _np_ln(x, P[f"{pre}.ln1.g"], P[f"{pre}.ln1.b"])
            q = (a @ P[f"{pre}.self.wq"]).reshape(H, dk)
            k = (a @ P[f"{pre}.self.wk"]).reshape(H, dk)
            v = (a @ P[f"{pre}.self.wv"]).reshape(H, dk)
            K = np.stack(state.self_k[l] + [k], axis=1)  # [H, i+1, dk]
            V = np.stack(state.self_v[l] + [v], axis=1)
            w = _np_softmax(np.einsum("hd,hnd->hn", q, K) / np.sqrt(dk))
            x = x + (np.einsum("hn,hnd->hd", w, V).reshape(1, d) @ P[f"{pre}.self.wo"])
            new_k.append(k)
            new_v.append(v)

            qn = _np_ln(x, P[f"{pre}.ln2.g"], P[f"{pre}.ln2.b"])
            mq = (qn @ P[f"{pre}.mma.mono_wq"]).reshape(H, dk)
            e = np.einsum("hd,hsd->hs", mq, cache.mono_k[l][:, dps]) / np.sqrt(dk)  # [H, G]
            z = e + P[f"{pre}.mma.bias"][:, None]
            ef = None
            if cfg.future_info:
                y_tilde = _np_future_ffn(P, l, y_tilde)
                ef = ((y_tilde @ P[f"fut.{l}.wq"]) @ cache.fut_k[l][dps].T / np.sqrt(d))[0]  # [G]
                z = z + ef if cfg.modulation == "additive" else z * ef
            prob = np.clip(_np_sigmoid(z), P_MIN, P_MAX)

            sq = (qn @ P[f"{pre}.mma.soft_wq"]).reshape(H, dk)
            ctx_heads = np.zeros((H, dk))
            alpha_rows = np.zeros((H, S))
            for h in range(H):
                start = state.positions[l, h]
                cand = np.nonzero(dps >= start)[0]
                hit = cand[prob[h, cand] > threshold]
                if hit.size:
                    t, found[l, h], p_used[l, h] = dps[hit[0]], True, prob[h, hit[0]]
                elif final:
                    t, p_used[l, h] = S - 1, 1.0
                else:
                    t, p_used[l, h] = dps[-1], prob[h, cand[-1]] if cand.size else 0.0
                positions[l, h] = t
                alpha_rows[h, t] = 1.0
                u = sq[h] @ cache.soft_k[l][h, : t + 1].T / np.sqrt(dk)
                ctx_heads[h] = _np_softmax(u) @ cache.values[l][h, : t + 1]
            x = x + ctx_heads.reshape(1, d) @ P[f"{pre}.mma.wo"]
            f_in = _np_ln(x, P[f"{pre}.ln3.g"], P[f"{pre}.ln3.b"])
            x = x + (np.maximum(f_in @ P[f"{pre}.ffn.w1"] + P[f"{pre}.ffn.b1"], 0.0) @ P[f"{pre}.ffn.w2"]
                     + P[f"{pre}.ffn.b2"])
            energies.append(e)
            fenergies.append(ef)
            alphas.append(alpha_rows)
            contexts.append(ctx_heads.reshape(d))
        logits = _np_ln(x, P["dec.ln.g"], P["dec.ln.b"]) @ P["out.w"] + P["out.b"]
        z = logits[0] - logits[0].max()
        log_probs = z - np.log(np.exp(z).sum())
        return StepResult(log_probs, p_used, positions, found, energies, fenergies, alphas, contexts, new_k, new_v)

    def commit(self, state: DecoderState, result: StepResult) -> None:
        for l in range(self.cfg.dec_layers):
            state.self_k[l].append(result.new_k[l])
            state.self_v[l].append(result.new_v[l])
        state.positions = result.positions.copy()
        state.step += 1


def _np_ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    return xc / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps) * g + b


def _np_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _np_sigmoid(z):
    return sigmoid(Tensor(z)).data


def _np_future_ffn(P, l, y):
    p = f"fut.{l}"
    hidden = np.maximum(y @ P[f"{p}.w1"] + P[f"{p}.b1"], 0.0)
    return _np_ln(y + hidden @ P[f"{p}.w2"] + P[f"{p}.b2"], P[f"{p}.ln.g"], P[f"{p}.ln.b"])


# -- checkpoints -------------------------------------------------------------------------

def save_checkpoint(path: Path, model: MMAModel, extra: dict | None = None) -> None:
    """Deterministic single-file dump: magic, JSON header, raw little-endian float64 blobs."""
    names = sorted(model.params)
    entries, offset = [], 0
    for name in names:
        arr = model.params[name].data
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "src_vocab": model.src_vocab.tokens,
        "tgt_vocab": model.tgt_vocab.tokens,
        "params": entries,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(model.params[name].data, dtype="<f8").tobytes())


def load_checkpoint(path: Path) -> tuple[MMAModel, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise VersionError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16: 16 + n].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint version {header.get('version')} != {CHECKPOINT_VERSION}")
    base = 16 + n
    params = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = base + entry["offset"]
        arr = np.frombuffer(raw[start: start + count * 8], dtype="<f8").reshape(entry["shape"]).copy()
        params[entry["name"]] = Tensor(arr, requires_grad=True, name=entry["name"])
    cfg = ModelConfig.from_dict(header["config"])
    model = MMAModel(cfg, Vocabulary(header["src_vocab"]), Vocabulary(header["tgt_vocab"]), params)
    return model, header.get("extra", {})
