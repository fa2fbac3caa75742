import json

import numpy as np
import pytest

from cohret.corpus import (
    CITE_RELATIONS,
    CLUE_RELATIONS,
    Corpus,
    CorpusError,
    CorpusPair,
    RelationVocab,
    load_corpus,
    relation_positive_rates,
    save_corpus,
    split_corpus,
)
from cohret.synthetic import generate_synthetic_corpus


def write_corpus_files(tmp_path, records, schema, relations):
    path = tmp_path / "data.jsonl"
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    with open(tmp_path / "data.manifest.json", "w") as fh:
        json.dump({"schema": schema, "relations": relations}, fh)
    return str(path)


def clue_record(i, labels=None):
    labels = labels or {name: 0 for name in CLUE_RELATIONS}
    return {
        "pair_id": f"p{i:03d}",
        "text": f"a caption number {i}",
        "image": f"images/{i}.jpg",
        "labels": labels,
    }


# -- loading ---------------------------------------------------------------------


def test_load_clue_schema(tmp_path):
    path = write_corpus_files(
        tmp_path, [clue_record(i) for i in range(12)], "clue", CLUE_RELATIONS
    )
    corpus = load_corpus(path, schema="clue")
    assert len(corpus) == 12
    assert corpus.vocab.names == tuple(CLUE_RELATIONS)


def test_load_cite_schema_has_seven_relations(tmp_path):
    recs = [
        {
            "pair_id": f"c{i}",
            "text": "step one stir the pot",
            "image": f"im/{i}.jpg",
            "labels": {q: 1 if i % 2 else 0 for q in CITE_RELATIONS},
        }
        for i in range(4)
    ]
    path = write_corpus_files(tmp_path, recs, "cite", CITE_RELATIONS)
    corpus = load_corpus(path, schema="cite")
    assert corpus.vocab.names == ("Q2", "Q3", "Q4", "Q5", "Q6", "Q7", "Q8")


def test_load_schema_from_manifest(tmp_path):
    path = write_corpus_files(
        tmp_path, [clue_record(i) for i in range(3)], "clue", CLUE_RELATIONS
    )
    corpus = load_corpus(path)  # schema read from the sidecar manifest
    assert corpus.schema == "clue"


def test_load_empty_corpus_errors(tmp_path):
    path = write_corpus_files(tmp_path, [], "clue", CLUE_RELATIONS)
    with pytest.raises(CorpusError, match="empty corpus"):
        load_corpus(path, schema="clue")


def test_load_unknown_relation_errors(tmp_path):
    rec = clue_record(0)
    rec["labels"]["NotARelation"] = 1
    path = write_corpus_files(tmp_path, [rec], "clue", CLUE_RELATIONS)
    with pytest.raises(CorpusError, match="NotARelation"):
        load_corpus(path, schema="clue")


def test_load_malformed_record_names_pair_and_field(tmp_path):
    rec = clue_record(7)
    del rec["text"]
    path = write_corpus_files(tmp_path, [rec], "clue", CLUE_RELATIONS)
    with pytest.raises(CorpusError, match="p007.*text"):
        load_corpus(path, schema="clue")


def test_load_missing_label_errors(tmp_path):
    rec = clue_record(1)
    del rec["labels"]["Meta"]
    path = write_corpus_files(tmp_path, [rec], "clue", CLUE_RELATIONS)
    with pytest.raises(CorpusError, match="Meta"):
        load_corpus(path, schema="clue")


def test_roundtrip_synthetic_corpus(tmp_path):
    corpus = generate_synthetic_corpus(20, 3, 0.5, seed=1)
    path = str(tmp_path / "syn.jsonl")
    save_corpus(corpus, path)
    loaded = load_corpus(path)
    assert len(loaded) == 20
    assert loaded.vocab.names == corpus.vocab.names
    np.testing.assert_allclose(loaded.pairs[0].image, corpus.pairs[0].image, rtol=1e-6)
    assert [p.labels for p in loaded.pairs] == [p.labels for p in corpus.pairs]


# -- domain type invariants ---------------------------------------------------------


def test_relation_vocab_rejects_duplicates():
    with pytest.raises(CorpusError):
        RelationVocab(("a", "a"), (0.5, 0.5))


def test_corpus_rejects_duplicate_pair_ids():
    vocab = RelationVocab(("r",), (0.0,))
    pair = CorpusPair("x", "text", "img", (0,))
    with pytest.raises(CorpusError):
        Corpus((pair, pair), vocab)


def test_corpus_rejects_misaligned_labels():
    vocab = RelationVocab(("r", "s"), (0.0, 0.0))
    with pytest.raises(CorpusError):
        Corpus((CorpusPair("x", "text", "img", (0,)),), vocab)


# -- splitting -----------------------------------------------------------------------


def make_corpus(n):
    vocab = RelationVocab(("r",), (0.5,))
    pairs = tuple(
        CorpusPair(f"p{i:04d}", f"text {i}", f"im/{i}.jpg", (i % 2,)) for i in range(n)
    )
    return Corpus(pairs, vocab)


def test_split_sizes_cite_shape():
    train, val, test = split_corpus(make_corpus(4299), seed=0)
    assert len(test) == 860
    assert len(train) + len(val) == 3439
    assert len(val) == 344  # round(0.1 * 3439)


def test_split_sizes_clue_shape():
    train, val, test = split_corpus(make_corpus(7559), seed=0)
    assert len(test) == 1512
    assert len(train) + len(val) == 6047


def test_split_deterministic():
    c = make_corpus(100)
    a = split_corpus(c, seed=5)
    b = split_corpus(c, seed=5)
    for x, y in zip(a, b):
        assert [p.pair_id for p in x.pairs] == [p.pair_id for p in y.pairs]


def test_split_partitions_disjoint_and_complete():
    c = make_corpus(237)
    train, val, test = split_corpus(c, seed=3)
    ids = [p.pair_id for part in (train, val, test) for p in part.pairs]
    assert len(ids) == len(set(ids)) == 237
    assert set(ids) == {p.pair_id for p in c.pairs}


def test_split_empty_partition_errors():
    with pytest.raises(CorpusError):
        split_corpus(make_corpus(3), seed=0)


# -- positive rates ---------------------------------------------------------------------


def test_positive_rates_counts():
    c = make_corpus(10)  # alternating labels -> rate 0.5
    assert relation_positive_rates(c) == {"r": 0.5}


def test_positive_rates_all_zero():
    vocab = RelationVocab(("r",), (0.0,))
    pairs = tuple(CorpusPair(f"p{i}", "t", "i.jpg", (0,)) for i in range(5))
    assert relation_positive_rates(Corpus(pairs, vocab)) == {"r": 0.0}


def test_positive_rates_invariant_under_reordering():
    corpus = generate_synthetic_corpus(30, 3, 0.5, seed=2)
    rates = relation_positive_rates(corpus)
    shuffled = Corpus(tuple(reversed(corpus.pairs)), corpus.vocab)
    assert relation_positive_rates(shuffled) == rates
    assert all(0.0 <= v <= 1.0 for v in rates.values())
