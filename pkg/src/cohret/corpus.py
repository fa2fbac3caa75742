"""Corpus loading, serialization and splitting for coherence-annotated image-text pairs.

A corpus on disk is a JSON Lines file (one record per pair) plus a sidecar
manifest ``<stem>.manifest.json`` declaring the schema name and the ordered
relation list. Records look like::

    {"pair_id": "...", "text": "...", "image": <path | base64 | [floats]>,
     "labels": {"Visible": 1, "Subjective": 0, ...}}

Synthetic corpora store the pseudo-image directly as an array of numbers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

# Canonical relation orders for the two supported annotation schemas.
# CITE uses question identifiers Q2..Q8; Clue uses named relations.
CITE_RELATIONS = ["Q2", "Q3", "Q4", "Q5", "Q6", "Q7", "Q8"]
CLUE_RELATIONS = ["Visible", "Subjective", "Action", "Story", "Meta", "Irrelevant"]

SCHEMA_RELATIONS = {"cite": CITE_RELATIONS, "clue": CLUE_RELATIONS}


class CorpusError(ValueError):
    """Raised for malformed corpus files or schema violations."""


@dataclass(frozen=True)
class RelationVocab:
    """Ordered set of coherence relation names with their dataset positive rates."""

    names: tuple[str, ...]
    positive_rate: tuple[float, ...]

    def __post_init__(self):
        if not self.names:
            raise CorpusError("relation vocab must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise CorpusError("relation names must be unique")
        if len(self.positive_rate) != len(self.names):
            raise CorpusError("positive_rate must align with names")
        for r in self.positive_rate:
            if not (0.0 <= r <= 1.0):
                raise CorpusError(f"positive rate {r} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown relation {name!r}") from None


@dataclass(frozen=True)
class CorpusPair:
    """One text/image pair with its binary coherence label vector.

    ``image`` is either a filesystem path / opaque string handle or, for
    synthetic corpora, the pseudo-image vector itself.
    """

    pair_id: str
    text: str
    image: str | np.ndarray
    labels: tuple[int, ...]

    def __post_init__(self):
        if not self.text:
            raise CorpusError(f"pair {self.pair_id!r}: empty text")
        for v in self.labels:
            if v not in (0, 1):
                raise CorpusError(f"pair {self.pair_id!r}: non-binary label {v!r}")


@dataclass(frozen=True)
class Corpus:
    """Immutable list of pairs sharing one relation vocabulary."""

    pairs: tuple[CorpusPair, ...]
    vocab: RelationVocab
    split_tag: str = "all"
    schema: str = "custom"

    def __post_init__(self):
        ids = [p.pair_id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise CorpusError("pair_ids must be unique")
        for p in self.pairs:
            if len(p.labels) != len(self.vocab):
                raise CorpusError(
                    f"pair {p.pair_id!r}: {len(p.labels)} labels for "
                    f"{len(self.vocab)} relations"
                )

    def __len__(self) -> int:
        return len(self.pairs)

    def texts(self) -> list[str]:
        return [p.text for p in self.pairs]

    def label_matrix(self) -> np.ndarray:
        return np.array([p.labels for p in self.pairs], dtype=np.int64)

    def with_rates(self) -> "Corpus":
        """Return a copy whose vocab carries the realized positive rates."""
        rates = relation_positive_rates(self)
        vocab = RelationVocab(self.vocab.names, tuple(rates[n] for n in self.vocab.names))
        return replace(self, vocab=vocab)


def _manifest_path(path: str) -> str:
    stem, _ = os.path.splitext(path)
    return stem + ".manifest.json"


def _parse_image_field(pair_id: str, value) -> str | np.ndarray:
    if isinstance(value, str) and value:
        return value
    if isinstance(value, (list, tuple)):
        arr = np.asarray(value, dtype=np.float32)
        if arr.ndim != 1 or arr.size == 0:
            raise CorpusError(f"pair {pair_id!r}: image array must be a non-empty vector")
        return arr
    raise CorpusError(f"pair {pair_id!r}: field 'image' must be a string or number array")


def load_corpus(path: str, schema: str | None = None) -> Corpus:
    """Load a JSONL corpus, validating records against the schema.

    ``schema`` is one of ``cite``/``clue``/``synthetic``; when omitted it is
    read from the sidecar manifest. For cite/clue the manifest relation list
    must match the canonical Table order.
    """
    if not os.path.exists(path):
        raise CorpusError(f"corpus file not found: {path}")
    manifest_file = _manifest_path(path)
    manifest = {}
    if os.path.exists(manifest_file):
        with open(manifest_file) as fh:
            manifest = json.load(fh)
    if schema is None:
        schema = manifest.get("schema")
        if schema is None:
            raise CorpusError(f"no schema given and no manifest beside {path}")
    schema = schema.lower()

    if schema in SCHEMA_RELATIONS:
        relations = SCHEMA_RELATIONS[schema]
        declared = manifest.get("relations")
        if declared is not None and list(declared) != relations:
            raise CorpusError(
                f"manifest relations {declared} do not match the {schema} schema"
            )
    else:
        relations = manifest.get("relations")
        if not relations:
            raise CorpusError(f"schema {schema!r} requires a manifest relation list")
        relations = list(relations)

    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            pair_id = rec.get("pair_id")
            if not pair_id or not isinstance(pair_id, str):
                raise CorpusError(f"{path}:{lineno}: missing or invalid 'pair_id'")
            for key in ("text", "image", "labels"):
                if key not in rec:
                    raise CorpusError(f"pair {pair_id!r}: missing field {key!r}")
            if not isinstance(rec["text"], str) or not rec["text"]:
                raise CorpusError(f"pair {pair_id!r}: field 'text' must be a non-empty string")
            labels_map = rec["labels"]
            if not isinstance(labels_map, dict):
                raise CorpusError(f"pair {pair_id!r}: field 'labels' must be an object")
            for name in labels_map:
                if name not in relations:
                    raise CorpusError(f"pair {pair_id!r}: unknown relation name {name!r}")
            labels = []
            for name in relations:
                if name not in labels_map:
                    raise CorpusError(f"pair {pair_id!r}: missing label for relation {name!r}")
                value = labels_map[name]
                if value not in (0, 1, True, False):
                    raise CorpusError(f"pair {pair_id!r}: label {name!r} must be 0 or 1")
                labels.append(int(value))
            image = _parse_image_field(pair_id, rec["image"])
            pairs.append(CorpusPair(pair_id, rec["text"], image, tuple(labels)))

    if not pairs:
        raise CorpusError("empty corpus")
    vocab = RelationVocab(tuple(relations), tuple(0.0 for _ in relations))
    return Corpus(tuple(pairs), vocab, split_tag="all", schema=schema).with_rates()


def save_corpus(corpus: Corpus, path: str) -> None:
    """Write a corpus as JSONL plus its sidecar manifest."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        for p in corpus.pairs:
            image = p.image.tolist() if isinstance(p.image, np.ndarray) else p.image
            rec = {
                "pair_id": p.pair_id,
                "text": p.text,
                "image": image,
                "labels": {n: int(v) for n, v in zip(corpus.vocab.names, p.labels)},
            }
            fh.write(json.dumps(rec) + "\n")
    with open(_manifest_path(path), "w") as fh:
        json.dump(
            {
                "schema": corpus.schema,
                "relations": list(corpus.vocab.names),
                "split_tag": corpus.split_tag,
                "n_pairs": len(corpus),
            },
            fh,
            indent=2,
        )


def split_corpus(
    corpus: Corpus,
    seed: int,
    test_frac: float = 0.2,
    val_frac: float = 0.1,
) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic (train, val, test) partition.

    The test split takes ``round(n * test_frac)`` pairs; the validation split
    is then carved out of the remaining training portion as
    ``round(train * val_frac)``.
    """
    n = len(corpus)
    if n == 0:
        raise CorpusError("cannot split an empty corpus")
    n_test = int(round(n * test_frac))
    n_train0 = n - n_test
    n_val = int(round(n_train0 * val_frac))
    n_train = n_train0 - n_val
    if min(n_train, n_val, n_test) < 1:
        raise CorpusError(
            f"split of {n} pairs would leave an empty partition "
            f"(train {n_train}, val {n_val}, test {n_test})"
        )
    order = np.random.default_rng(seed).permutation(n)
    chunks = {
        "train": order[:n_train],
        "val": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }
    out = []
    for tag in ("train", "val", "test"):
        pairs = tuple(corpus.pairs[i] for i in sorted(chunks[tag]))
        out.append(replace(corpus, pairs=pairs, split_tag=tag))
    return out[0], out[1], out[2]


def relation_positive_rates(corpus: Corpus) -> dict[str, float]:
    """Per-relation fraction of pairs carrying a positive label."""
    if len(corpus) == 0:
        raise CorpusError("empty corpus")
    mat = corpus.label_matrix()
    rates = mat.mean(axis=0)
    return {name: float(r) for name, r in zip(corpus.vocab.names, rates)}


def subset(corpus: Corpus, pair_ids: Sequence[str], split_tag: str | None = None) -> Corpus:
    """Corpus restricted to ``pair_ids`` (original order preserved)."""
    wanted = set(pair_ids)
    pairs = tuple(p for p in corpus.pairs if p.pair_id in wanted)
    return replace(corpus, pairs=pairs, split_tag=split_tag or corpus.split_tag)
