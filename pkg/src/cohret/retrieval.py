"""Similarity matrices, confidence-based selective refinement and ranking."""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch


@dataclass(frozen=True)
class RefinementConfig:
    """Confidence sharpness and the top-2 gap threshold for refinement."""

    lam: float = 0.13
    threshold: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")


@dataclass(frozen=True)
class SimilarityMatrix:
    """Cosine similarities, queries x candidates."""

    theta: np.ndarray
    query_ids: tuple[str, ...]
    candidate_ids: tuple[str, ...]

    def __post_init__(self):
        q, c = self.theta.shape
        if q != len(self.query_ids) or c != len(self.candidate_ids):
            raise ValueError("theta shape must match id lists")


@dataclass(frozen=True)
class RankingResult:
    """Descending-similarity ordering for one query."""

    ordered_ids: tuple[str, ...]
    rank_of_truth: int
    refined: bool = False


def _normalized_rows(emb) -> np.ndarray:
    arr = np.asarray(
        emb.detach().cpu() if isinstance(emb, torch.Tensor) else emb, dtype=np.float64
    )
    if arr.ndim != 2:
        raise ValueError("embeddings must be a 2-D matrix")
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("zero embedding has no direction")
    return arr / norms


def build_similarity_matrix(
    text_embs,
    image_embs,
    query_ids: Sequence[str],
    candidate_ids: Sequence[str],
) -> SimilarityMatrix:
    """theta[i][j] = cosine similarity of query i and candidate j."""
    theta = np.clip(_normalized_rows(text_embs) @ _normalized_rows(image_embs).T, -1.0, 1.0)
    return SimilarityMatrix(theta, tuple(query_ids), tuple(candidate_ids))


def confidence_from_probs(probs: np.ndarray, lam: float) -> np.ndarray:
    """eta = sum over relations of exp(lam * |prob - 0.5|).

    ``probs`` has relation predictions on its last axis; the result drops
    that axis. Every entry lies in [C, C * exp(lam / 2)] for C relations.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return np.exp(lam * np.abs(probs - 0.5)).sum(axis=-1)


def confidence_scores(model, text_embs, image_embs, lam: float) -> np.ndarray:
    """Confidence matrix over every (query, candidate) pairing.

    Runs the model's coherence head on all pairings; raises for head-less
    (agnostic) models.
    """
    if getattr(model, "head", None) is None:
        raise ValueError("no coherence head: confidence scores need a coherence-aware model")
    text_embs = torch.as_tensor(
        text_embs.detach() if isinstance(text_embs, torch.Tensor) else np.asarray(text_embs),
        dtype=torch.float32,
    )
    image_embs = torch.as_tensor(
        image_embs.detach() if isinstance(image_embs, torch.Tensor) else np.asarray(image_embs),
        dtype=torch.float32,
    )
    n_query, n_cand = text_embs.shape[0], image_embs.shape[0]
    rows = []
    with torch.no_grad():
        for q in range(n_query):
            expanded = text_embs[q].unsqueeze(0).expand(n_cand, -1)
            probs = model.predict_coherence(expanded, image_embs)
            rows.append(probs.cpu().numpy())
    probs = np.stack(rows)  # (queries, candidates, relations)
    return confidence_from_probs(probs, lam)


def refine_similarities(theta: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Entrywise product of similarities and confidence scores."""
    theta = np.asarray(theta, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if theta.shape != eta.shape:
        raise ValueError(f"shape mismatch: theta {theta.shape} vs eta {eta.shape}")
    return theta * eta


def top2_gap(row: np.ndarray) -> float:
    """Difference between the largest and second-largest entries."""
    if row.shape[-1] < 2:
        raise ValueError("top-2 gap needs at least 2 candidates")
    top2 = np.partition(row, -2)[-2:]
    return float(top2[1] - top2[0])


def selective_refine(
    theta: np.ndarray, eta: np.ndarray, threshold: float
) -> tuple[np.ndarray, np.ndarray]:
    """Replace rows of difficult queries (top-2 gap < threshold) by theta * eta.

    Gaps are measured on the unrefined similarities. Returns the final matrix
    and a per-query boolean flag of which rows were refined.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[1] < 2:
        raise ValueError("selective refinement needs at least 2 candidates")
    refined_matrix = refine_similarities(theta, eta)
    gaps = np.array([top2_gap(row) for row in theta])
    flags = gaps < threshold
    final = theta.copy()
    final[flags] = refined_matrix[flags]
    return final, flags


def rank_images(
    similarity_row: np.ndarray,
    candidate_ids: Sequence[str],
    truth_id: str,
    refined: bool = False,
) -> RankingResult:
    """Rank candidates by descending similarity; ties break by ascending id."""
    row = np.asarray(similarity_row, dtype=np.float64)
    ids = list(candidate_ids)
    if len(ids) != row.shape[0]:
        raise ValueError("similarity row and candidate ids must align")
    if truth_id not in ids:
        raise ValueError(f"ground-truth candidate {truth_id!r} not in the pool")
    order = sorted(range(len(ids)), key=lambda j: (-row[j], ids[j]))
    ordered_ids = tuple(ids[j] for j in order)
    rank = ordered_ids.index(truth_id) + 1
    return RankingResult(ordered_ids, rank, refined)


def pool_seed(base_seed: int, query_id: str) -> np.random.Generator:
    """Pool RNG keyed by the repeat seed and the query id (model-independent)."""
    return np.random.default_rng([base_seed, zlib.crc32(query_id.encode())])


def sample_retrieval_pool(
    candidate_ids: Sequence[str],
    size: int,
    seed: int | np.random.Generator,
    must_include: str,
) -> list[str]:
    """Uniform sample of candidates (no replacement) containing the truth.

    When the candidate set is not larger than ``size`` the full set is
    returned.
    """
    if size < 2:
        raise ValueError("pool size must be >= 2")
    ids = list(candidate_ids)
    if must_include not in ids:
        raise ValueError(f"must_include {must_include!r} not among candidates")
    if len(ids) <= size:
        return ids
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    others = [i for i in ids if i != must_include]
    chosen = rng.choice(len(others), size=size - 1, replace=False)
    return [others[int(j)] for j in chosen] + [must_include]


def export_embeddings(
    prefix: str, ids: Sequence[str], matrix, normalized: bool
) -> None:
    """Write a row-major float32 matrix plus a JSON manifest (ids, dim, flag)."""
    arr = np.asarray(
        matrix.detach().cpu() if isinstance(matrix, torch.Tensor) else matrix,
        dtype=np.float32,
    )
    if arr.ndim != 2 or arr.shape[0] != len(ids):
        raise ValueError("matrix rows must align with ids")
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    arr.tofile(prefix + ".bin")
    with open(prefix + ".json", "w") as fh:
        json.dump(
            {
                "ids": list(ids),
                "dim": int(arr.shape[1]),
                "count": int(arr.shape[0]),
                "normalized": bool(normalized),
                "dtype": "float32",
                "order": "C",
            },
            fh,
            indent=2,
        )


def import_embeddings(prefix: str) -> tuple[list[str], np.ndarray, bool]:
    with open(prefix + ".json") as fh:
        manifest = json.load(fh)
    arr = np.fromfile(prefix + ".bin", dtype=np.float32)
    arr = arr.reshape(manifest["count"], manifest["dim"])
    return list(manifest["ids"]), arr, bool(manifest["normalized"])
