"""Optimization loop, epoch selection by validation MedR, repeated
evaluation with fresh retrieval pools, and hyperparameter sweeps."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import Corpus, relation_positive_rates
from .encoders import EncoderParams
from .metrics import RetrievalMetrics, retrieval_metrics
from .model import RetrievalModel
from .objectives import (
    relation_weights,
    total_loss,
    triplet_retrieval_loss,
    weighted_bce,
)
from .retrieval import (
    RefinementConfig,
    confidence_scores,
    pool_seed,
    rank_images,
    sample_retrieval_pool,
    top2_gap,
)
from .word2vec import EmbeddingTable


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "cmcm"
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    lambda_cls: float = 0.1
    margin: float = 0.3
    max_len: int = 40
    head_combine: str = "concat"
    detach_head: bool = False
    encoder: EncoderParams = field(default_factory=EncoderParams)
    eval_pool_size: int = 500
    recall_ks: tuple[int, ...] = (1, 5, 10)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries a diagnostic snapshot."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_med_r: float
    state: dict  # CPU state_dict copy


@dataclass
class CheckpointSet:
    """Per-epoch checkpoints with selection by lowest validation MedR."""

    records: list[EpochRecord]

    @property
    def best_epoch(self) -> int:
        """Argmin of validation MedR; ties go to the earliest epoch."""
        best = 0
        for i, rec in enumerate(self.records):
            if rec.val_med_r < self.records[best].val_med_r:
                best = i
        return best

    @property
    def val_med_r(self) -> list[float]:
        return [r.val_med_r for r in self.records]

    @property
    def train_loss(self) -> list[float]:
        return [r.train_loss for r in self.records]


@dataclass
class RepeatResult:
    seed: int
    ranks_by_query: dict[str, int]
    refined_queries: list[str]
    metrics: RetrievalMetrics


@dataclass
class EvalReport:
    repeats: list[RepeatResult]
    mean: RetrievalMetrics
    pool_size: int
    refinement: RefinementConfig | None

    def to_dict(self) -> dict:
        return {
            "pool_size": self.pool_size,
            "refinement": dataclasses.asdict(self.refinement) if self.refinement else None,
            "mean": self.mean.to_dict(),
            "repeats": [
                {
                    "seed": r.seed,
                    "metrics": r.metrics.to_dict(),
                    "n_refined": len(r.refined_queries),
                    "ranks_by_query": r.ranks_by_query,
                }
                for r in self.repeats
            ],
        }


def _corpus_tensors(model: RetrievalModel, corpus: Corpus):
    texts = [p.text for p in corpus.pairs]
    ids, lengths, _ = model.tokenize_batch(texts)
    images = model.image_tensor([p.image for p in corpus.pairs])
    labels = corpus.label_matrix()
    return ids, lengths, images, labels


def batch_losses(
    model: RetrievalModel,
    text_emb: torch.Tensor,
    image_emb: torch.Tensor,
    head_labels: torch.Tensor | None,
    weights: np.ndarray | None,
    config: TrainConfig,
):
    """(retrieval, classification-or-None, total) losses for one batch."""
    ret = triplet_retrieval_loss(text_emb, image_emb, config.margin)
    cls = None
    if model.head is not None:
        t, i = (text_emb, image_emb)
        if config.detach_head:
            t, i = t.detach(), i.detach()
        probs = model.head(t, i)
        cls = weighted_bce(probs, head_labels, weights)
    return ret, cls, total_loss(ret, cls, config.lambda_cls)


def _validation_med_r(model: RetrievalModel, val_corpus: Corpus, config: TrainConfig) -> float:
    report = evaluate_repeated(
        model,
        val_corpus,
        repeats=1,
        seeds=[config.seed],
        pool_size=config.eval_pool_size,
        refinement=None,
        ks=config.recall_ks,
    )
    return report.mean.med_r


def train(
    config: TrainConfig,
    train_corpus: Corpus,
    val_corpus: Corpus,
    table: EmbeddingTable,
) -> tuple[RetrievalModel, CheckpointSet]:
    """Train one model variant; returns it loaded at the best epoch.

    The best epoch is the one with the lowest validation MedR (plain cosine
    ranking; the coherence head is not consulted for epoch selection). A
    non-finite loss aborts with a ``TrainingDiverged`` snapshot.
    """
    model = RetrievalModel(
        config.encoder,
        table,
        train_corpus.vocab,
        mode=config.mode,
        max_len=config.max_len,
        head_combine=config.head_combine,
        seed=config.seed,
    )

    weights = None
    head_labels_all = None
    if model.head is not None:
        rates = relation_positive_rates(train_corpus)
        head_rates = {name: rates[name] for name in model.head_relations}
        w = relation_weights(head_rates)
        weights = np.array([w[name] for name in model.head_relations])

    ids_all, lengths_all, images_all, labels_all = _corpus_tensors(model, train_corpus)
    image_feats = model.image_encoder.features(images_all)
    if model.head is not None:
        head_labels_all = torch.as_tensor(
            model.head_label_columns(labels_all), dtype=torch.float32
        )

    optimizer = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad], lr=config.learning_rate
    )
    shuffle_rng = np.random.default_rng(config.seed)
    n = len(train_corpus)
    records = []
    for epoch in range(config.epochs):
        model.train()
        order = shuffle_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            if len(batch) < 2:
                continue  # BatchNorm and mining both need >= 2 rows
            idx = torch.as_tensor(batch)
            text_emb, _ = model.text_encoder(ids_all[idx], lengths_all[idx])
            image_emb = model.image_encoder.project(image_feats[idx])
            if not bool(torch.isfinite(text_emb).all() and torch.isfinite(image_emb).all()):
                raise TrainingDiverged(
                    "non-finite embeddings",
                    {"epoch": epoch, "step": start // config.batch_size},
                )
            head_labels = head_labels_all[idx] if head_labels_all is not None else None
            ret, cls, loss = batch_losses(
                model, text_emb, image_emb, head_labels, weights, config
            )
            if not bool(torch.isfinite(loss)):
                raise TrainingDiverged(
                    "non-finite loss",
                    {
                        "epoch": epoch,
                        "step": start // config.batch_size,
                        "retrieval_loss": float(ret),
                        "classification_loss": None if cls is None else float(cls),
                    },
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))

        val_med_r = _validation_med_r(model, val_corpus, config)
        state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
        records.append(
            EpochRecord(epoch, float(np.mean(epoch_losses)), val_med_r, state)
        )

    checkpoints = CheckpointSet(records)
    model.load_state_dict(checkpoints.records[checkpoints.best_epoch].state)
    model.eval()
    return model, checkpoints


def evaluate_repeated(
    model: RetrievalModel,
    corpus: Corpus,
    repeats: int = 3,
    seeds: list[int] | None = None,
    pool_size: int = 500,
    refinement: RefinementConfig | None = None,
    ks: tuple[int, ...] = (1, 5, 10),
) -> EvalReport:
    """Evaluate retrieval over ``repeats`` fresh candidate pools.

    Pools are keyed by (repeat seed, query id) only, so different model
    variants evaluated with the same seeds see identical pools. When the
    corpus is not larger than ``pool_size`` the pool is the full corpus and
    repeats coincide.
    """
    if seeds is None:
        seeds = list(range(repeats))
    if len(seeds) != repeats:
        raise ValueError("need one seed per repeat")

    pair_ids = [p.pair_id for p in corpus.pairs]
    text_embs, _ = model.embed_texts([p.text for p in corpus.pairs])
    image_embs = model.embed_images([p.image for p in corpus.pairs])

    t = text_embs.numpy().astype(np.float64)
    i = image_embs.numpy().astype(np.float64)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    i /= np.linalg.norm(i, axis=1, keepdims=True)
    full_theta = np.clip(t @ i.T, -1.0, 1.0)

    full_eta = None
    if refinement is not None:
        full_eta = confidence_scores(model, text_embs, image_embs, refinement.lam)

    col = {pid: j for j, pid in enumerate(pair_ids)}
    results = []
    for seed in seeds:
        ranks = {}
        refined_queries = []
        for q, qid in enumerate(pair_ids):
            pool = sample_retrieval_pool(pair_ids, pool_size, pool_seed(seed, qid), qid)
            idx = np.array([col[pid] for pid in pool])
            theta_row = full_theta[q, idx]
            refined = False
            if refinement is not None and top2_gap(theta_row) < refinement.threshold:
                theta_row = theta_row * full_eta[q, idx]
                refined = True
                refined_queries.append(qid)
            ranks[qid] = rank_images(theta_row, pool, qid, refined).rank_of_truth
        results.append(
            RepeatResult(
                seed=seed,
                ranks_by_query=ranks,
                refined_queries=refined_queries,
                metrics=retrieval_metrics(list(ranks.values()), ks),
            )
        )

    med_rs = [r.metrics.med_r for r in results]
    mean = RetrievalMetrics(
        med_r=float(np.mean(med_rs)),
        recall_at={
            k: float(np.mean([r.metrics.recall_at[k] for r in results])) for k in ks
        },
        n_queries=len(pair_ids),
        med_r_std=float(np.std(med_rs)),
        recall_at_std={
            k: float(np.std([r.metrics.recall_at[k] for r in results])) for k in ks
        },
    )
    return EvalReport(results, mean, pool_size, refinement)


SWEEPABLE = ("lambda_cls", "max_seq_len")


def sweep(
    param: str,
    values: list,
    base_config: TrainConfig,
    train_corpus: Corpus,
    val_corpus: Corpus,
    table: EmbeddingTable,
    repeats: int = 3,
) -> list[dict]:
    """Train one model per parameter value and report validation MedR."""
    if param not in SWEEPABLE:
        raise ValueError(f"sweepable parameters are {SWEEPABLE}, got {param!r}")
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for value in values:
        if param == "lambda_cls":
            config = dataclasses.replace(base_config, lambda_cls=float(value))
        else:
            config = dataclasses.replace(base_config, max_len=int(value))
        model, _ = train(config, train_corpus, val_corpus, table)
        report = evaluate_repeated(
            model,
            val_corpus,
            repeats=repeats,
            pool_size=config.eval_pool_size,
            refinement=None,
            ks=config.recall_ks,
        )
        rows.append(
            {
                "value": value,
                "med_r_mean": report.mean.med_r,
                "med_r_std": report.mean.med_r_std,
            }
        )
    return rows


def save_checkpoint(
    ckpt_dir: str,
    model: RetrievalModel,
    checkpoints: CheckpointSet,
    config: TrainConfig,
) -> None:
    """Persist the best-epoch model plus the training history."""
    encoder = dataclasses.asdict(config.encoder)
    cfg = dataclasses.asdict(config)
    cfg["encoder"] = encoder
    model.save(ckpt_dir, extra={"train_config": cfg})
    history = {
        "best_epoch": checkpoints.best_epoch,
        "val_med_r": checkpoints.val_med_r,
        "train_loss": checkpoints.train_loss,
    }
    with open(os.path.join(ckpt_dir, "history.json"), "w") as fh:
        json.dump(history, fh, indent=2)


def load_checkpoint(ckpt_dir: str) -> RetrievalModel:
    return RetrievalModel.load(ckpt_dir)
