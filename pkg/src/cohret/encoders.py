"""Image and text encoders projecting into the shared latent space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .word2vec import EmbeddingTable

BACKBONE_TOY = "toy-mlp"
BACKBONE_CNN = "pretrained-cnn"


@dataclass(frozen=True)
class EncoderParams:
    """Architecture knobs shared by both towers."""

    backbone: str = BACKBONE_TOY
    text_rnn: str = "bilstm"  # "bilstm" | "bigru" | "none"
    attention: bool = True
    shared_dim: int = 1024
    hidden_size: int = 1024
    image_size: int = 224
    image_dim: int = 32  # toy backbone input width
    freeze_embeddings: bool = True

    def __post_init__(self):
        if self.shared_dim < 1:
            raise ValueError("shared_dim must be >= 1")
        if self.backbone not in (BACKBONE_TOY, BACKBONE_CNN):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.text_rnn not in ("bilstm", "bigru", "none"):
            raise ValueError(f"unknown text_rnn {self.text_rnn!r}")
        if self.text_rnn != "none" and self.hidden_size % 2 != 0:
            raise ValueError("hidden_size must be even for bidirectional RNNs")


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last dim with masked positions pinned to exactly 0."""
    if not bool(mask.any(dim=-1).all()):
        raise ValueError("attention over a fully masked sequence")
    filled = scores.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(filled, dim=-1)
    return weights.masked_fill(~mask, 0.0)


class AttentionPool(nn.Module):
    """Additive pooling: a learned per-position score, softmaxed over real tokens."""

    def __init__(self, state_dim: int):
        super().__init__()
        self.score = nn.Linear(state_dim, 1)

    def forward(self, states: torch.Tensor, mask: torch.Tensor):
        single = states.ndim == 2
        if single:
            states, mask = states.unsqueeze(0), mask.unsqueeze(0)
        scores = self.score(states).squeeze(-1)
        weights = masked_softmax(scores, mask)
        pooled = torch.bmm(weights.unsqueeze(1), states).squeeze(1)
        if single:
            return pooled.squeeze(0), weights.squeeze(0)
        return pooled, weights


def mean_pool(states: torch.Tensor, mask: torch.Tensor):
    """Masked mean with the (uniform) pooling weights returned for inspection."""
    single = states.ndim == 2
    if single:
        states, mask = states.unsqueeze(0), mask.unsqueeze(0)
    counts = mask.sum(dim=-1, keepdim=True)
    if int(counts.min()) == 0:
        raise ValueError("mean pooling over a fully masked sequence")
    weights = mask.to(states.dtype) / counts.to(states.dtype)
    pooled = torch.bmm(weights.unsqueeze(1), states).squeeze(1)
    if single:
        return pooled.squeeze(0), weights.squeeze(0)
    return pooled, weights


class TextEncoder(nn.Module):
    """word2vec -> (bi)RNN -> attention or mean pooling -> BN -> linear projection."""

    def __init__(self, params: EncoderParams, table: EmbeddingTable):
        super().__init__()
        self.params = params
        self.embedding = nn.Embedding.from_pretrained(
            torch.as_tensor(table.vectors, dtype=torch.float32),
            freeze=params.freeze_embeddings,
            padding_idx=0,
        )
        emb_dim = table.dim
        if params.text_rnn == "none":
            self.rnn = None
            state_dim = emb_dim
        else:
            rnn_cls = nn.LSTM if params.text_rnn == "bilstm" else nn.GRU
            self.rnn = rnn_cls(
                emb_dim,
                params.hidden_size // 2,
                num_layers=1,
                batch_first=True,
                bidirectional=True,
            )
            state_dim = params.hidden_size
        self.attn = AttentionPool(state_dim) if params.attention else None
        self.bn = nn.BatchNorm1d(state_dim)
        self.proj = nn.Linear(state_dim, params.shared_dim)

    def forward(self, token_ids: torch.Tensor, lengths: torch.Tensor):
        """Returns (shared embeddings B x D, pooling weights B x L)."""
        if token_ids.ndim != 2:
            raise ValueError("token_ids must be (batch, max_len)")
        if int(token_ids.max()) >= self.embedding.num_embeddings:
            raise ValueError("token id out of embedding table range")
        if int(lengths.min()) < 1:
            raise ValueError("empty sequence (all-pad input)")
        max_len = token_ids.shape[1]
        mask = torch.arange(max_len, device=token_ids.device)[None, :] < lengths[:, None]

        states = self.embedding(token_ids)
        if self.rnn is not None:
            packed = nn.utils.rnn.pack_padded_sequence(
                states, lengths.cpu(), batch_first=True, enforce_sorted=False
            )
            out, _ = self.rnn(packed)
            states, _ = nn.utils.rnn.pad_packed_sequence(
                out, batch_first=True, total_length=max_len
            )
        if self.attn is not None:
            pooled, weights = self.attn(states, mask)
        else:
            pooled, weights = mean_pool(states, mask)
        return self.proj(self.bn(pooled)), weights


class ImageEncoder(nn.Module):
    """Feature backbone -> BN -> linear projection into the shared space.

    The toy backbone consumes the synthetic image vectors directly; the
    pretrained backbone runs a frozen ResNet-50 over 224x224 pixels.
    """

    def __init__(self, params: EncoderParams):
        super().__init__()
        self.params = params
        if params.backbone == BACKBONE_TOY:
            self.backbone = None
            feat_dim = params.image_dim
        else:
            self.backbone = _frozen_resnet50()
            feat_dim = 2048
        self.bn = nn.BatchNorm1d(feat_dim)
        self.proj = nn.Linear(feat_dim, params.shared_dim)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        """Backbone features (identity for the toy path, frozen CNN otherwise)."""
        if self.backbone is None:
            if images.ndim != 2 or images.shape[1] != self.params.image_dim:
                raise ValueError(
                    f"toy backbone expects (batch, {self.params.image_dim}) inputs, "
                    f"got {tuple(images.shape)}"
                )
            return images
        with torch.no_grad():
            return self.backbone(images).flatten(1)

    def project(self, feats: torch.Tensor) -> torch.Tensor:
        """Trainable part: batch norm plus the bottleneck projection."""
        return self.proj(self.bn(feats))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.project(self.features(images))


def _frozen_resnet50() -> nn.Module:
    try:
        from torchvision import models
    except ImportError as exc:
        raise RuntimeError(
            "the pretrained-cnn backbone needs torchvision (pip install cohret[vision])"
        ) from exc
    try:
        net = models.resnet50(weights=models.ResNet50_Weights.IMAGENET1K_V1)
    except Exception as exc:
        raise RuntimeError(f"could not load pretrained ResNet-50 weights: {exc}") from exc
    net.fc = nn.Identity()
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def load_pixels(image_path: str, image_size: int = 224) -> torch.Tensor:
    """Decode an image file to a normalized (3, S, S) tensor for the CNN backbone."""
    try:
        from PIL import Image
    except ImportError as exc:
        raise RuntimeError("decoding image files needs Pillow") from exc
    try:
        img = Image.open(image_path).convert("RGB").resize((image_size, image_size))
    except Exception as exc:
        raise ValueError(f"undecodable image {image_path!r}: {exc}") from exc
    arr = np.asarray(img, dtype=np.float32) / 255.0
    mean = np.array([0.485, 0.456, 0.406], dtype=np.float32)
    std = np.array([0.229, 0.224, 0.225], dtype=np.float32)
    arr = (arr - mean) / std
    return torch.from_numpy(arr.transpose(2, 0, 1))
