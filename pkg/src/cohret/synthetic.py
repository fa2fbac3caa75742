"""Synthetic desk-scale corpora with controllable coherence signal.

Each pair draws a latent topic vector that is rendered into both modalities:
the pseudo-text names the pair's topic cluster and that topic's strongest
axes as tokens (shared by pairs of the same cluster) plus relation marker
tokens, and the pseudo-image is the topic vector plus relation-dependent
shifts and noise. The relation
shift directions are orthogonal to the topic subspace, so a linear probe can
read the labels off the image whenever ``signal_strength`` is high.

With ``signal_strength = 0`` neither rendering depends on the labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, CorpusPair, RelationVocab


@dataclass(frozen=True)
class SyntheticConfig:
    image_dim: int = 32
    pairs_per_topic: int = 6
    tokens_per_text: int = 12
    informative_tokens: int = 2  # axis tokens besides the topic-name token
    filler_vocab: int = 40
    shift_scale: float = 2.0
    noise_sigma: float = 0.25
    jitter_sigma: float = 0.3
    positive_rates: tuple[float, ...] | None = None


def _relation_directions(rng: np.random.Generator, dim: int, k: int) -> np.ndarray:
    """k orthonormal shift directions (rows), deterministic for a given rng."""
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    return basis[:, :k].T


def _exact_count_labels(rng: np.random.Generator, n: int, rates: np.ndarray) -> np.ndarray:
    """Label matrix with exactly round(rate * n) positives per relation."""
    labels = np.zeros((n, len(rates)), dtype=np.int64)
    for c, rate in enumerate(rates):
        n_pos = int(round(rate * n))
        labels[rng.permutation(n)[:n_pos], c] = 1
    return labels


def generate_synthetic_corpus(
    n_pairs: int,
    n_relations: int,
    signal_strength: float,
    seed: int,
    config: SyntheticConfig | None = None,
) -> Corpus:
    """Deterministic synthetic corpus of ``n_pairs`` image-text pairs."""
    if n_pairs < 10:
        raise ValueError("n_pairs must be >= 10")
    if n_relations < 1:
        raise ValueError("n_relations must be >= 1")
    if not (0.0 <= signal_strength <= 1.0):
        raise ValueError("signal_strength must lie in [0, 1]")
    cfg = config or SyntheticConfig()
    if n_relations > cfg.image_dim // 2:
        raise ValueError("n_relations too large for image_dim")
    if cfg.positive_rates is not None and len(cfg.positive_rates) != n_relations:
        raise ValueError("positive_rates must have one entry per relation")

    rng = np.random.default_rng(seed)
    n_topics = max(2, n_pairs // cfg.pairs_per_topic)
    directions = _relation_directions(rng, cfg.image_dim, n_relations)

    # Topic centers live in the orthogonal complement of the shift directions.
    centers = rng.normal(size=(n_topics, cfg.image_dim))
    centers -= (centers @ directions.T) @ directions

    rates = np.asarray(
        cfg.positive_rates
        if cfg.positive_rates is not None
        else np.linspace(0.2, 0.6, n_relations)
    )
    labels = _exact_count_labels(rng, n_pairs, rates)

    # Shared-by-topic informative tokens: a topic-name token plus the
    # topic's strongest coordinates as signed axis tokens.
    topic_tokens = []
    for k in range(n_topics):
        tokens = [f"t{k:03d}"]
        top = np.argsort(-np.abs(centers[k]))[: cfg.informative_tokens]
        tokens.extend(f"d{j:02d}{'p' if centers[k, j] >= 0 else 'n'}" for j in top)
        topic_tokens.append(tokens)

    names = tuple(f"R{c}" for c in range(n_relations))
    pairs = []
    for p in range(n_pairs):
        topic = p % n_topics
        latent = centers[topic] + cfg.jitter_sigma * rng.normal(size=cfg.image_dim)
        # Each positive relation renders its image shift and its text marker
        # independently with probability signal_strength, so neither modality
        # alone is a perfect label oracle below full signal.
        rendered = labels[p] * (rng.random(n_relations) < signal_strength)
        image = (
            latent
            + cfg.shift_scale * (rendered @ directions)
            + cfg.noise_sigma * rng.normal(size=cfg.image_dim)
        )
        tokens = list(topic_tokens[topic])
        for c in range(n_relations):
            if labels[p, c] and rng.random() < signal_strength:
                tokens.append(f"rel{c}")
        while len(tokens) < cfg.tokens_per_text:
            tokens.append(f"w{int(rng.integers(cfg.filler_vocab)):02d}")
        tokens = [tokens[i] for i in rng.permutation(len(tokens))]
        pairs.append(
            CorpusPair(
                pair_id=f"syn-{p:05d}",
                text=" ".join(tokens),
                image=image.astype(np.float32),
                labels=tuple(int(v) for v in labels[p]),
            )
        )

    vocab = RelationVocab(names, tuple(float(r) for r in labels.mean(axis=0)))
    return Corpus(tuple(pairs), vocab, split_tag="all", schema="synthetic")
