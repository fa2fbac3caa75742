"""Training objectives: triplet retrieval loss with in-batch hard negative
mining, the coherence-relation head, and class-weighted BCE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn

PROB_EPS = 1e-7

MODE_ALL = "all-relations"
MODE_SINGLE = "single-relation"
MODE_AGNOSTIC = "agnostic"


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.3
    lambda_cls: float = 0.1
    mode: str = MODE_ALL
    relation: str | None = None  # set in single-relation mode

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.lambda_cls < 0:
            raise ValueError("lambda_cls must be >= 0")
        if self.mode not in (MODE_ALL, MODE_SINGLE, MODE_AGNOSTIC):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.mode == MODE_SINGLE and not self.relation:
            raise ValueError("single-relation mode needs a relation name")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def cosine_similarity(a, b) -> float:
    """cos(a, b) = a.b / sqrt((a.a)(b.b)); errors on zero vectors."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("vectors must have equal length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


def cosine_matrix(text: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """Row-wise cosine similarity matrix (texts x images)."""
    t = torch.nn.functional.normalize(text, dim=1, eps=1e-12)
    i = torch.nn.functional.normalize(image, dim=1, eps=1e-12)
    return t @ i.T


def mine_hard_negatives(text, image) -> tuple[np.ndarray, np.ndarray]:
    """Hardest in-batch negatives under cosine similarity.

    Returns (per-text hardest image index, per-image hardest text index),
    excluding the aligned positives; exact ties resolve to the lowest index.
    """
    t = np.asarray(text.detach().cpu() if isinstance(text, torch.Tensor) else text,
                   dtype=np.float64)
    i = np.asarray(image.detach().cpu() if isinstance(image, torch.Tensor) else image,
                   dtype=np.float64)
    if t.shape != i.shape or t.ndim != 2:
        raise ValueError("text and image batches must be equal-shape matrices")
    b = t.shape[0]
    if b < 2:
        raise ValueError("hard negative mining needs a batch of at least 2")
    t_norms = np.linalg.norm(t, axis=1, keepdims=True)
    i_norms = np.linalg.norm(i, axis=1, keepdims=True)
    if (t_norms == 0).any() or (i_norms == 0).any():
        raise ValueError("cosine similarity undefined for zero embeddings")
    tn = t / t_norms
    im = i / i_norms
    sims = tn @ im.T
    np.fill_diagonal(sims, -np.inf)
    hard_image = sims.argmax(axis=1)  # per text row
    hard_text = sims.argmax(axis=0)  # per image column
    return hard_image, hard_text


def triplet_hinge(s_pos: float, s_neg: float, margin: float) -> float:
    """Per-direction hinge term: max(0, margin - s_pos + s_neg)."""
    return max(0.0, margin - s_pos + s_neg)


def triplet_retrieval_loss(
    text: torch.Tensor, image: torch.Tensor, margin: float = 0.3
) -> torch.Tensor:
    """Bidirectional triplet loss with intra-batch hardest negatives.

    For each aligned pair the hinge is applied against the hardest negative
    image (text anchor) and the hardest negative text (image anchor); the
    batch loss is the mean of the per-sample sums.
    """
    text = _as_tensor(text)
    image = _as_tensor(image)
    hard_image, hard_text = mine_hard_negatives(text, image)
    sims = cosine_matrix(text, image)
    idx = torch.arange(sims.shape[0], device=sims.device)
    pos = sims[idx, idx]
    neg_for_text = sims[idx, torch.as_tensor(hard_image, device=sims.device)]
    neg_for_image = sims[torch.as_tensor(hard_text, device=sims.device), idx]
    zero = torch.zeros((), dtype=sims.dtype, device=sims.device)
    per_sample = torch.maximum(zero, margin - pos + neg_for_text) + torch.maximum(
        zero, margin - pos + neg_for_image
    )
    return per_sample.mean()


def relation_weights(positive_rates: Mapping[str, float]) -> dict[str, float]:
    """Per-relation weights reciprocal to the positive rate."""
    weights = {}
    for name, rate in positive_rates.items():
        if not (0.0 < rate < 1.0):
            raise ValueError(f"degenerate relation {name!r}: positive rate {rate}")
        weights[name] = 1.0 / rate
    return weights


class CoherenceHead(nn.Module):
    """Single linear layer predicting relation presence from the two towers.

    Inputs are unit-normalized before combination; ``combine`` is either
    "concat" (default) or "product". Output probabilities are clamped away
    from 0 and 1 so the BCE stays finite.
    """

    def __init__(self, shared_dim: int, n_relations: int, combine: str = "concat"):
        super().__init__()
        if combine not in ("concat", "product"):
            raise ValueError(f"unknown combine mode {combine!r}")
        if n_relations < 1:
            raise ValueError("head needs at least one relation output")
        self.combine = combine
        in_dim = 2 * shared_dim if combine == "concat" else shared_dim
        self.fc = nn.Linear(in_dim, n_relations)

    def forward(self, text_emb: torch.Tensor, image_emb: torch.Tensor) -> torch.Tensor:
        t = torch.nn.functional.normalize(text_emb, dim=-1, eps=1e-12)
        i = torch.nn.functional.normalize(image_emb, dim=-1, eps=1e-12)
        joint = torch.cat([t, i], dim=-1) if self.combine == "concat" else t * i
        probs = torch.sigmoid(self.fc(joint))
        return probs.clamp(PROB_EPS, 1.0 - PROB_EPS)


def weighted_bce(probs: torch.Tensor, labels: torch.Tensor, weights) -> torch.Tensor:
    """Class-weighted binary cross entropy, averaged over pairs.

    ``probs``/``labels`` are (batch x relations); ``weights`` is one positive
    weight per relation. Per pair the weighted per-relation terms are summed.
    """
    probs = _as_tensor(probs)
    if probs.ndim == 1:
        probs = probs.unsqueeze(0)
    labels = torch.as_tensor(
        np.asarray(labels, dtype=np.float64) if not isinstance(labels, torch.Tensor) else labels
    ).to(dtype=probs.dtype, device=probs.device)
    if labels.ndim == 1:
        labels = labels.unsqueeze(0)
    if probs.shape != labels.shape:
        raise ValueError(f"probs shape {tuple(probs.shape)} != labels shape {tuple(labels.shape)}")
    w = torch.as_tensor(np.asarray(weights, dtype=np.float64), device=probs.device).to(probs.dtype)
    if w.ndim != 1 or w.shape[0] != probs.shape[1]:
        raise ValueError("need one weight per relation")
    if (w <= 0).any():
        raise ValueError("relation weights must be positive")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    per_relation = labels * torch.log(p) + (1.0 - labels) * torch.log(1.0 - p)
    return -(per_relation * w).sum(dim=1).mean()


def total_loss(ret: torch.Tensor, cls: torch.Tensor | None, lambda_cls: float) -> torch.Tensor:
    """Combined batch objective; the classification term is absent in agnostic mode."""
    if cls is None:
        return ret
    return ret + lambda_cls * cls
