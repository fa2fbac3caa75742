"""Tokenization, vocabulary construction and sequence padding."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

_TOKEN_RE = re.compile(r"[a-z0-9]+")

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocab:
    """Token-to-id map with reserved pad (0) and unknown (1) ids."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def get(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.id_to_token[token_id]


def build_vocab(train_texts: Iterable[str], min_freq: int = 1) -> Vocab:
    """Build a vocabulary from training texts.

    Tokens with count below ``min_freq`` are dropped. Id assignment is
    deterministic: by descending frequency, ties broken alphabetically.
    """
    texts = list(train_texts)
    if not texts:
        raise ValueError("cannot build a vocabulary from an empty text list")
    counts = Counter()
    for text in texts:
        counts.update(tokenize(text))
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    id_to_token = (PAD_TOKEN, UNK_TOKEN, *kept)
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    return Vocab(token_to_id, id_to_token)


@dataclass(frozen=True)
class TokenSequence:
    """Padded token-id sequence; ``length`` counts the real (non-pad) tokens."""

    token_ids: tuple[int, ...]
    length: int
    max_len: int
    truncated: bool = False

    def __post_init__(self):
        if self.length > self.max_len:
            raise ValueError("length exceeds max_len")
        if len(self.token_ids) != self.max_len:
            raise ValueError("token_ids must be padded to max_len")


def tokenize_and_pad(text: str, vocab: Vocab, max_len: int) -> TokenSequence:
    """Tokenize, map through the vocab (OOV -> unk) and pad/truncate to max_len."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    tokens = tokenize(text)
    truncated = len(tokens) > max_len
    tokens = tokens[:max_len]
    ids = [vocab.get(t) for t in tokens]
    ids.extend([PAD_ID] * (max_len - len(ids)))
    return TokenSequence(tuple(ids), length=min(len(tokens), max_len), max_len=max_len,
                         truncated=truncated)
