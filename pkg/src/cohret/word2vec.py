"""Skip-gram word embeddings with negative sampling.

Small, dependency-free trainer sufficient for the corpora this package
handles. Fully deterministic for a fixed seed (single-threaded numpy).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .textproc import PAD_ID, UNK_ID, Vocab, build_vocab, tokenize


@dataclass(frozen=True)
class EmbeddingTable:
    """One vector per vocabulary token; the pad row is all zeros."""

    vocab: Vocab
    vectors: np.ndarray  # (vocab_size, dim) float32

    def __post_init__(self):
        if self.vectors.shape[0] != self.vocab.size:
            raise ValueError("vector count must match vocab size")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def save(self, path: str) -> None:
        np.savez(
            path,
            vectors=self.vectors,
            tokens=np.array(self.vocab.id_to_token, dtype=object),
        )

    @classmethod
    def load(cls, path: str) -> "EmbeddingTable":
        data = np.load(path, allow_pickle=True)
        tokens = tuple(str(t) for t in data["tokens"])
        vocab = Vocab({t: i for i, t in enumerate(tokens)}, tokens)
        return cls(vocab, data["vectors"].astype(np.float32))

    @classmethod
    def random(cls, vocab: Vocab, dim: int, seed: int = 0) -> "EmbeddingTable":
        """Untrained table (uniform init, zero pad row) for quick experiments."""
        rng = np.random.default_rng(seed)
        vectors = ((rng.random((vocab.size, dim)) - 0.5) / dim).astype(np.float32)
        vectors[PAD_ID] = 0.0
        return cls(vocab, vectors)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def train_word_embeddings(
    train_texts: Iterable[str],
    dim: int = 300,
    window: int = 10,
    min_freq: int = 1,
    seed: int = 0,
    epochs: int = 5,
    negatives: int = 5,
    lr: float = 0.025,
    vocab: Vocab | None = None,
) -> EmbeddingTable:
    """Train skip-gram embeddings over the given texts.

    Uses dynamic window sampling and ``negatives`` unigram^0.75 negative
    draws per context word, with a linearly decaying learning rate.
    Tokens below ``min_freq`` are dropped from the training stream.
    """
    if dim <= 0:
        raise ValueError("embedding dim must be positive")
    texts = list(train_texts)
    if vocab is None:
        vocab = build_vocab(texts, min_freq=min_freq)

    sentences = []
    counts = np.zeros(vocab.size, dtype=np.float64)
    for text in texts:
        ids = [vocab.token_to_id[t] for t in tokenize(text) if t in vocab.token_to_id]
        if ids:
            sentences.append(np.array(ids, dtype=np.int64))
            np.add.at(counts, ids, 1.0)

    rng = np.random.default_rng(seed)
    vectors = ((rng.random((vocab.size, dim)) - 0.5) / dim).astype(np.float64)
    # Random (not zero) context init: it breaks the correlated early drift
    # that otherwise collapses tiny-corpus embeddings onto one direction.
    context = ((rng.random((vocab.size, dim)) - 0.5) / dim).astype(np.float64)
    vectors[PAD_ID] = 0.0

    # Unigram^0.75 table over real tokens only (pad/unk never sampled).
    noise = counts.copy()
    noise[PAD_ID] = noise[UNK_ID] = 0.0
    noise = noise**0.75
    total_noise = noise.sum()
    if total_noise > 0:
        noise_cdf = np.cumsum(noise / total_noise)
    else:
        noise_cdf = None

    total_centers = max(1, sum(len(s) for s in sentences) * epochs)
    seen = 0
    min_lr = lr * 1e-4
    for _ in range(epochs):
        for sent in sentences:
            n = len(sent)
            for i in range(n):
                step_lr = max(min_lr, lr * (1.0 - seen / total_centers))
                seen += 1
                b = int(rng.integers(1, window + 1))
                lo, hi = max(0, i - b), min(n, i + b + 1)
                ctx = np.concatenate([sent[lo:i], sent[i + 1 : hi]])
                if ctx.size == 0 or noise_cdf is None:
                    continue
                center = int(sent[i])
                negs = np.searchsorted(
                    noise_cdf, rng.random(ctx.size * negatives), side="right"
                )
                negs = negs[negs != center]  # a token is never its own negative
                targets = np.concatenate([ctx, negs])
                labels = np.zeros(targets.size)
                labels[: ctx.size] = 1.0
                v = vectors[center]
                u = context[targets]
                grad = (_sigmoid(u @ v) - labels) * step_lr
                np.add.at(context, targets, -np.outer(grad, v))
                vectors[center] -= u.T @ grad

    # Post-process: small corpora leave SGNS vectors dominated by one shared
    # component that swamps the discriminative structure. Remove the mean and
    # the top principal direction, then rescale to unit mean norm so
    # downstream encoders see healthy input scales.
    real = vectors[2:]
    if len(real) > 1:
        real -= real.mean(axis=0)
        _, _, vt = np.linalg.svd(real, full_matrices=False)
        real -= np.outer(real @ vt[0], vt[0])
        mean_norm = float(np.linalg.norm(real, axis=1).mean())
        if mean_norm > 0:
            real /= mean_norm
    vectors[PAD_ID] = 0.0
    return EmbeddingTable(vocab, vectors.astype(np.float32))
