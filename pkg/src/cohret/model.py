"""Dual-encoder retrieval model bundle: towers, optional coherence head,
tokenization state, and checkpoint (de)serialization."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .corpus import Corpus, RelationVocab
from .encoders import EncoderParams, ImageEncoder, TextEncoder, load_pixels
from .objectives import CoherenceHead
from .textproc import tokenize_and_pad
from .word2vec import EmbeddingTable

VARIANT_BASE = "base"
VARIANT_CMCA = "cmca"
VARIANT_CMCM = "cmcm"
VARIANT_CMCM_NOATTN = "cmcm-noattn"
VARIANT_CMCM_SINGLE = "cmcm-single"


@dataclass(frozen=True)
class ModeSpec:
    """Resolved model variant: attention on/off and coherence-head scope."""

    name: str
    attention: bool
    head: str | None  # None (agnostic), "all", or a single relation name


def parse_mode(mode: str) -> ModeSpec:
    mode = mode.strip()
    if not mode.startswith(VARIANT_CMCM_SINGLE):
        mode = mode.lower()  # the single-relation suffix is case-sensitive
    if mode == VARIANT_BASE:
        return ModeSpec(mode, attention=False, head=None)
    if mode == VARIANT_CMCA:
        return ModeSpec(mode, attention=True, head=None)
    if mode == VARIANT_CMCM:
        return ModeSpec(mode, attention=True, head="all")
    if mode == VARIANT_CMCM_NOATTN:
        return ModeSpec(mode, attention=False, head="all")
    if mode.startswith(VARIANT_CMCM_SINGLE + ":"):
        relation = mode.split(":", 1)[1]
        if not relation:
            raise ValueError("cmcm-single needs a relation name, e.g. cmcm-single:Story")
        return ModeSpec(mode, attention=True, head=relation)
    raise ValueError(f"unknown model mode {mode!r}")


class RetrievalModel(nn.Module):
    """Text and image towers plus the optional coherence head.

    Construction is deterministic for a fixed seed; the towers are created
    before the head so coherence-aware and agnostic variants share identical
    tower initializations under the same seed.
    """

    def __init__(
        self,
        params: EncoderParams,
        table: EmbeddingTable,
        relation_vocab: RelationVocab,
        mode: str = VARIANT_CMCM,
        max_len: int = 40,
        head_combine: str = "concat",
        seed: int = 0,
    ):
        super().__init__()
        spec = parse_mode(mode)
        params = dataclasses.replace(params, attention=spec.attention)
        if spec.head is not None and spec.head != "all":
            relation_vocab.index(spec.head)  # validate the relation exists

        torch.manual_seed(seed)
        self.text_encoder = TextEncoder(params, table)
        self.image_encoder = ImageEncoder(params)
        if spec.head is None:
            self.head = None
        else:
            n_out = len(relation_vocab) if spec.head == "all" else 1
            self.head = CoherenceHead(params.shared_dim, n_out, combine=head_combine)

        self.params = params
        self.mode_spec = spec
        self.table = table
        self.relation_vocab = relation_vocab
        self.max_len = max_len
        self.head_combine = head_combine
        self.seed = seed

    # -- relation bookkeeping -------------------------------------------------

    @property
    def head_relations(self) -> tuple[str, ...]:
        """Relation names predicted by the head (empty for agnostic variants)."""
        if self.mode_spec.head is None:
            return ()
        if self.mode_spec.head == "all":
            return self.relation_vocab.names
        return (self.mode_spec.head,)

    def head_label_columns(self, labels: np.ndarray) -> np.ndarray:
        cols = [self.relation_vocab.index(n) for n in self.head_relations]
        return labels[:, cols]

    # -- encoding helpers -----------------------------------------------------

    def tokenize_batch(self, texts: list[str]) -> tuple[torch.Tensor, torch.Tensor, list[bool]]:
        seqs = [tokenize_and_pad(t, self.table.vocab, self.max_len) for t in texts]
        ids = torch.tensor([s.token_ids for s in seqs], dtype=torch.long)
        lengths = torch.tensor([s.length for s in seqs], dtype=torch.long)
        return ids, lengths, [s.truncated for s in seqs]

    def embed_texts(self, texts: list[str], batch_size: int = 256):
        """Inference-mode text embeddings plus pooling weights."""
        was_training = self.training
        self.eval()
        embs, weights = [], []
        with torch.no_grad():
            for start in range(0, len(texts), batch_size):
                ids, lengths, _ = self.tokenize_batch(texts[start : start + batch_size])
                e, w = self.text_encoder(ids, lengths)
                embs.append(e)
                weights.append(w)
        self.train(was_training)
        return torch.cat(embs), torch.cat(weights)

    def image_tensor(self, images: list) -> torch.Tensor:
        if self.params.backbone == "toy-mlp":
            rows = []
            for img in images:
                if not isinstance(img, np.ndarray):
                    raise ValueError(
                        "toy backbone needs synthetic image vectors, got a path; "
                        "use backbone='pretrained-cnn' for pixel images"
                    )
                rows.append(torch.as_tensor(img, dtype=torch.float32))
            return torch.stack(rows)
        return torch.stack([load_pixels(p, self.params.image_size) for p in images])

    def embed_images(self, images: list, batch_size: int = 256) -> torch.Tensor:
        was_training = self.training
        self.eval()
        embs = []
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                batch = self.image_tensor(images[start : start + batch_size])
                embs.append(self.image_encoder(batch))
        self.train(was_training)
        return torch.cat(embs)

    def predict_coherence(self, text_emb: torch.Tensor, image_emb: torch.Tensor) -> torch.Tensor:
        if self.head is None:
            raise ValueError(f"no coherence head in mode {self.mode_spec.name!r}")
        return self.head(text_emb, image_emb)

    # -- qualitative inspection -----------------------------------------------

    def attention_report(self, corpus: Corpus) -> list[dict]:
        """Per-pair token/weight listing for the pooling weights."""
        reports = []
        texts = [p.text for p in corpus.pairs]
        _, weights = self.embed_texts(texts)
        for p, w in zip(corpus.pairs, weights):
            ids, lengths, truncated = self.tokenize_batch([p.text])
            length = int(lengths[0])
            tokens = [self.table.vocab.token(int(t)) for t in ids[0][:length]]
            reports.append(
                {
                    "pair_id": p.pair_id,
                    "tokens": tokens,
                    "weights": [float(x) for x in w[:length]],
                    "truncated": truncated[0],
                }
            )
        return reports

    # -- persistence ------------------------------------------------------------

    def save(self, ckpt_dir: str, extra: dict | None = None) -> None:
        os.makedirs(ckpt_dir, exist_ok=True)
        manifest = {
            "mode": self.mode_spec.name,
            "max_len": self.max_len,
            "head_combine": self.head_combine,
            "seed": self.seed,
            "encoder_params": dataclasses.asdict(self.params),
            "relation_vocab": {
                "names": list(self.relation_vocab.names),
                "positive_rate": list(self.relation_vocab.positive_rate),
            },
        }
        if extra:
            manifest["extra"] = extra
        with open(os.path.join(ckpt_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)
        torch.save(self.state_dict(), os.path.join(ckpt_dir, "model.pt"))
        self.table.save(os.path.join(ckpt_dir, "embeddings.npz"))

    @classmethod
    def load(cls, ckpt_dir: str) -> "RetrievalModel":
        with open(os.path.join(ckpt_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        table = EmbeddingTable.load(os.path.join(ckpt_dir, "embeddings.npz"))
        rv = manifest["relation_vocab"]
        relation_vocab = RelationVocab(tuple(rv["names"]), tuple(rv["positive_rate"]))
        model = cls(
            EncoderParams(**manifest["encoder_params"]),
            table,
            relation_vocab,
            mode=manifest["mode"],
            max_len=manifest["max_len"],
            head_combine=manifest["head_combine"],
            seed=manifest["seed"],
        )
        state = torch.load(os.path.join(ckpt_dir, "model.pt"), weights_only=True)
        model.load_state_dict(state)
        model.eval()
        return model
