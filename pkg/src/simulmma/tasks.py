"""Synthetic parallel corpora where target continuations are partly predictable.

* ``copy``: target equals source.
* ``shifted_copy``: target is a fixed bijection of the source with adjacent
  target tokens swapped at rate 0.2 (local reordering forces waiting).
* ``bigram_grammar``: the target is a Markov chain; with probability
  ``determinism`` the next target token is ``g(previous target token)``,
  otherwise it is drawn uniformly. The source always spells the target
  through the inverse bijection, so the pair stays a translation while the
  target side alone lets a language model anticipate grammar-driven tokens.

Structure (the bijection and the grammar) depends only on ``seed``; the
``stream`` argument draws further sentences from the same language.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

KINDS = ("copy", "shifted_copy", "bigram_grammar")
SWAP_RATE = 0.2

Pair = tuple[list[str], list[str]]


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "bigram_grammar"
    vocab_size: int = 32
    min_len: int = 4
    max_len: int = 10
    determinism: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.determinism <= 1.0:
            raise ValueError(f"determinism must lie in [0, 1], got {self.determinism}")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"invalid length range [{self.min_len}, {self.max_len}]")

    def to_dict(self) -> dict:
        return asdict(self)


def token(k: int) -> str:
    return f"w{k}"


def structure(spec: TaskSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(f, g)``: the source->target bijection and the target grammar."""
    rng = np.random.default_rng([spec.seed, 0])
    f = rng.permutation(spec.vocab_size)
    g = rng.permutation(spec.vocab_size)
    return f, g


def generate(spec: TaskSpec, n: int, stream: int = 0) -> list[Pair]:
    if n < 1:
        raise ValueError("n must be >= 1")
    f, g = structure(spec)
    f_inv = np.argsort(f)
    V = spec.vocab_size
    rng = np.random.default_rng([spec.seed, 1, stream])
    pairs: list[Pair] = []
    for _ in range(n):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        if spec.kind == "bigram_grammar":
            tgt = np.empty(length, dtype=np.int64)
            for i in range(length):
                grammar = i > 0 and rng.random() < spec.determinism
                tgt[i] = g[tgt[i - 1]] if grammar else rng.integers(V)
            src = f_inv[tgt]
        else:
            src = rng.integers(V, size=length)
            if spec.kind == "copy":
                tgt = src.copy()
            else:
                tgt = f[src]
                i = 0
                while i < length - 1:
                    if rng.random() < SWAP_RATE:
                        tgt[i], tgt[i + 1] = tgt[i + 1], tgt[i]
                        i += 2
                    else:
                        i += 1
        pairs.append(([token(k) for k in src], [token(k) for k in tgt]))
    return pairs


def split(dataset: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> list[list]:
    """Deterministic disjoint partition with sizes within one item of ``ratios``."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios.tolist()}")
    n = len(dataset)
    order = np.random.default_rng([seed, 2]).permutation(n)
    bounds = np.round(np.cumsum(ratios) * n).astype(int)
    bounds[-1] = n
    parts, lo = [], 0
    for hi in bounds:
        parts.append([dataset[k] for k in sorted(order[lo:hi])])
        lo = hi
    return parts


def write_parallel(directory: Path, name: str, pairs: Sequence[Pair]) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    src_path, tgt_path = directory / f"{name}.src", directory / f"{name}.tgt"
    src_path.write_text("".join(" ".join(s) + "\n" for s, _ in pairs), encoding="utf-8")
    tgt_path.write_text("".join(" ".join(t) + "\n" for _, t in pairs), encoding="utf-8")
    return [src_path, tgt_path]


def read_parallel(directory: Path, name: str) -> list[Pair]:
    directory = Path(directory)
    src = (directory / f"{name}.src").read_text(encoding="utf-8").splitlines()
    tgt = (directory / f"{name}.tgt").read_text(encoding="utf-8").splitlines()
    if len(src) != len(tgt):
        raise ValueError(f"{name}: {len(src)} source lines vs {len(tgt)} target lines")
    return [(s.split(), t.split()) for s, t in zip(src, tgt)]


def read_corpus(path: Path) -> list[list[str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.split() for line in lines if line.strip()]


def write_manifest(directory: Path, spec: TaskSpec, counts: dict, extra: dict | None = None) -> Path:
    path = Path(directory) / "manifest.json"
    payload = {"task": spec.to_dict(), "counts": counts, **(extra or {})}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
