"""Token <-> id mapping shared by the tasks, the LM and the model."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)

_MULTI_DIGIT = re.compile(r"^w(\d{2,})$")


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocabulary":
        seen = sorted({tok for sent in sentences for tok in sent}, key=_natural_key)
        return cls(seen)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def _natural_key(token: str):
    m = re.match(r"^([^\d]*)(\d+)$", token)
    return (m.group(1), int(m.group(2)), "") if m else (token, -1, token)


def identity_splitter(token: str) -> list[str]:
    return [token]


def digit_splitter(token: str) -> list[str]:
    """Split ``w12`` into ``[w1, w2]``, simulating an LM whose vocabulary differs from the model's."""
    m = _MULTI_DIGIT.match(token)
    if not m:
        return [token]
    return [f"w{d}" for d in m.group(1)]


SPLITTERS = {"shared": identity_splitter, "split": digit_splitter}
