"""Interpolated (Jelinek-Mercer) n-gram language model.

Stands in for the external next-token predictor. The lowest level is an
add-one unigram, so every interpolated distribution has full support. When
a higher-order context was never observed its weight is redistributed over
the levels that were.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .vocab import BOS, EOS, UNK

FORMAT = "simulmma-ngram"
FORMAT_VERSION = 1
GRID_STEPS = 20
HELDOUT_FRACTION = 0.05

# simulated per-token query cost in ms: small causal LM vs large masked LM
SLM_COST_MS = 6.1
XLM_COST_MS = 24.78


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class FuturePrediction:
    position: int  # 1-based index of the target token this prediction is attached to
    token: str | None
    is_null: bool


class NGramLM:
    def __init__(self, order: int, vocabulary: Sequence[str], counts: list[dict], weights: Sequence[float]):
        if not 1 <= order <= 5:
            raise ValueError(f"order must lie in [1, 5], got {order}")
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (order,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"interpolation weights must be a simplex of length {order}")
        self.order = order
        self.vocabulary = list(vocabulary)
        # predictable tokens: everything except the start symbol
        self.outputs = [t for t in self.vocabulary if t != BOS]
        self.out_index = {t: i for i, t in enumerate(self.outputs)}
        self.counts = counts  # counts[k]: context tuple (len k) -> Counter
        self.weights = weights
        self._dist = lru_cache(maxsize=65536)(self._distribution)

    # -- construction --------------------------------------------------------
    @classmethod
    def uniform(cls, tokens: Sequence[str]) -> "NGramLM":
        vocab = _with_specials(tokens)
        return cls(1, vocab, [{(): Counter()}], [1.0])

    def _map(self, tok: str) -> str:
        return tok if tok in self.out_index or tok == BOS else UNK

    # -- queries ---------------------------------------------------------------
    def _level_probs(self, context: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
        """Per-level distributions ``[order, V]`` and availability mask ``[order]``."""
        V = len(self.outputs)
        probs = np.zeros((self.order, V))
        avail = np.zeros(self.order, dtype=bool)
        uni = self.counts[0].get((), Counter())
        total = sum(uni.values())
        vec = np.ones(V)
        for tok, c in uni.items():
            vec[self.out_index[tok]] += c
        probs[0] = vec / (total + V)
        avail[0] = True
        for k in range(1, self.order):
            ctx = context[len(context) - k:] if k <= len(context) else None
            table = self.counts[k].get(ctx) if ctx is not None else None
            if table:
                n = sum(table.values())
                for tok, c in table.items():
                    probs[k, self.out_index[tok]] = c / n
                avail[k] = True
        return probs, avail

    def _distribution(self, context: tuple[str, ...]) -> np.ndarray:
        probs, avail = self._level_probs(context)
        w = np.where(avail, self.weights, 0.0)
        if w.sum() <= 0:
            w = avail.astype(np.float64)
        w = w / w.sum()
        out = w @ probs
        return out / out.sum()

    def context_of(self, prefix: Sequence[str]) -> tuple[str, ...]:
        padded = [BOS] * (self.order - 1) + [self._map(t) for t in prefix]
        return tuple(padded[len(padded) - (self.order - 1):]) if self.order > 1 else ()

    def next_distribution(self, prefix: Sequence[str]) -> np.ndarray:
        """Distribution over :attr:`outputs` for the token following ``prefix``."""
        return self._dist(self.context_of(prefix)).copy()

    def predict(self, prefix: Sequence[str]) -> str:
        return self.outputs[int(np.argmax(self._dist(self.context_of(prefix))))]

    def token_logprob(self, prefix: Sequence[str], tok: str) -> float:
        dist = self._dist(self.context_of(prefix))
        return float(np.log(dist[self.out_index[self._map(tok)]]))

    def sequence_perplexity(self, tokens: Sequence[str]) -> float:
        if len(tokens) == 0:
            raise ValueError("sequence_perplexity needs a non-empty sequence")
        nll = -sum(self.token_logprob(tokens[:i], tokens[i]) for i in range(len(tokens)))
        return float(math.exp(nll / len(tokens)))

    # -- persistence -------------------------------------------------------------
    def to_dict(self) -> dict:
        counts = []
        for k, table in enumerate(self.counts):
            for ctx, counter in sorted(table.items()):
                for tok, c in sorted(counter.items()):
                    counts.append([k, list(ctx), tok, int(c)])
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "order": self.order,
            "vocabulary": self.vocabulary,
            "weights": self.weights.tolist(),
            "counts": counts,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "NGramLM":
        if payload.get("format") != FORMAT or payload.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported LM file: {payload.get('format')} v{payload.get('version')}")
        order = payload["order"]
        counts: list[dict] = [defaultdict(Counter) for _ in range(order)]
        for k, ctx, tok, c in payload["counts"]:
            counts[k][tuple(ctx)][tok] = c
        return cls(order, payload["vocabulary"], [dict(t) for t in counts], payload["weights"])

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "NGramLM":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _with_specials(tokens) -> list[str]:
    body = sorted({t for t in tokens if t not in (BOS, EOS, UNK)})
    return [BOS, EOS, UNK] + body


def _count(corpus: Sequence[Sequence[str]], order: int, vocab: set[str]) -> list[dict]:
    counts: list[dict] = [defaultdict(Counter) for _ in range(order)]
    for sent in corpus:
        toks = [BOS] * (order - 1) + [t if t in vocab else UNK for t in sent] + [EOS]
        for pos in range(order - 1, len(toks)):
            for k in range(order):
                counts[k][tuple(toks[pos - k:pos])][toks[pos]] += 1
    return [dict(t) for t in counts]


def _simplex_grid(order: int, steps: int = GRID_STEPS) -> np.ndarray:
    """All weight vectors with entries in multiples of 1/steps and unigram weight > 0."""
    rows = []
    for cut in itertools.combinations(range(steps + order - 1), order - 1):
        parts = np.diff((-1,) + cut + (steps + order - 1,)) - 1
        if parts[0] > 0:
            rows.append(parts / steps)
    return np.array(rows, dtype=np.float64)


def fit_ngram(corpus: Sequence[Sequence[str]], order: int, seed: int = 0) -> NGramLM:
    """Count n-grams and grid-search interpolation weights on a 5% held-out split."""
    corpus = [list(s) for s in corpus if len(s) > 0]
    if not corpus:
        raise DataError("cannot fit a language model on an empty corpus")
    if not 1 <= order <= 5:
        raise ValueError(f"order must lie in [1, 5], got {order}")
    vocab = _with_specials(t for s in corpus for t in s)
    if order == 1:
        return NGramLM(1, vocab, _count(corpus, 1, set(vocab)), [1.0])

    n_held = int(len(corpus) * HELDOUT_FRACTION)
    perm = np.random.default_rng([seed, 3]).permutation(len(corpus))
    held = [corpus[k] for k in perm[:n_held]] if n_held else corpus
    train = [corpus[k] for k in perm[n_held:]] if n_held else corpus

    probe = NGramLM(order, vocab, _count(train, order, set(vocab)), np.eye(order)[0])
    rows = []
    for sent in held:
        toks = list(sent) + [EOS]
        for i, tok in enumerate(toks):
            probs, avail = probe._level_probs(probe.context_of(toks[:i]))
            rows.append((probs[:, probe.out_index[probe._map(tok)]], avail))
    level_p = np.array([r[0] for r in rows])  # [N, order]
    avail = np.array([r[1] for r in rows], dtype=np.float64)
    grid = _simplex_grid(order)  # [G, order]
    # renormalise weights over available levels per token, as in _distribution
    num = level_p @ grid.T  # [N, G]
    den = avail @ grid.T
    loglik = np.log(num / den).sum(axis=0)
    best = grid[int(np.argmax(loglik))]
    return NGramLM(order, vocab, _count(corpus, order, set(vocab)), best)


def rescore_candidates(prefix: Sequence[str], candidates: Sequence[tuple[str, float]], lm: NGramLM,
                       k: int = 5) -> str:
    """Pick the top-k candidate whose extended prefix has the lowest LM perplexity.

    Candidates are ranked by model score first; among equal perplexities the
    higher model score wins.
    """
    if not candidates:
        raise ValueError("rescore_candidates needs at least one candidate")
    ranked = sorted(candidates, key=lambda c: -c[1])[: max(k, 1)]
    best_tok, best_ppl = None, math.inf
    for tok, _ in ranked:
        ppl = lm.sequence_perplexity(list(prefix) + [tok])
        if ppl < best_ppl:
            best_tok, best_ppl = tok, ppl
    return best_tok


def precompute_predictions(dataset: Sequence[Sequence[str]], lm: NGramLM) -> list[list[FuturePrediction]]:
    """Attach to each target token the LM's guess of the token that follows it.

    Entry ``i`` (1-based) holds ``argmax P(. | y_1..y_i)``; the last entry is
    the null prediction, since nothing follows the final token. A decoder
    step whose input is ``y_i`` consumes entry ``i``; the start step gets null.
    """
    out = []
    for sent in dataset:
        n = len(sent)
        preds = [FuturePrediction(i + 1, lm.predict(sent[: i + 1]), False) for i in range(n - 1)]
        if n:
            preds.append(FuturePrediction(n, None, True))
        out.append(preds)
    return out


def next_token_accuracy(lm: NGramLM, corpus: Sequence[Sequence[str]], min_context: int = 1) -> float:
    """Top-1 accuracy of ``lm.predict`` on every position with at least ``min_context`` prior tokens."""
    hits = total = 0
    for sent in corpus:
        for i in range(min_context, len(sent)):
            hits += lm.predict(sent[:i]) == sent[i]
            total += 1
    return hits / total if total else float("nan")


