"""Command-line entry point exposing the full pipeline as subcommands.

Every run writes a manifest (resolved configuration, seeds, input hashes,
output paths, timestamps) next to its primary output, so reruns with the
same manifest inputs reproduce the outputs.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

CITE_REFINE_LAMBDA = 0.13
CLUE_REFINE_LAMBDA = 0.12
DATA_ROOT_ENV = "COHRET_DATA_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve(path: str | None) -> str | None:
    if path is None:
        return None
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not os.path.isabs(path) and not os.path.exists(path):
        return os.path.join(root, path)
    return path


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_path: str, command: str, args: dict, inputs: list[str], outputs: list[str], started: float):
    target = (
        os.path.join(out_path, "run_manifest.json")
        if os.path.isdir(out_path)
        else out_path + ".run.json"
    )
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(args.items()) if not k.startswith("_")},
        "input_hashes": {p: _sha256(p) for p in inputs if p and os.path.isfile(p)},
        "outputs": sorted(outputs),
        "started_at": started,
        "finished_at": time.time(),
    }
    with open(target, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def _apply_config_file(args: argparse.Namespace, parser_defaults: dict) -> argparse.Namespace:
    """Config precedence: explicit CLI flag > config file > built-in default."""
    if not getattr(args, "config", None):
        return args
    with open(_resolve(args.config)) as fh:
        file_cfg = json.load(fh)
    for key, value in file_cfg.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) == parser_defaults.get(key):
            setattr(args, key, value)
    return args


def _train_config(args):
    from .encoders import EncoderParams
    from .trainer import TrainConfig

    encoder = EncoderParams(
        backbone=args.backbone,
        text_rnn=args.text_rnn,
        shared_dim=args.shared_dim,
        hidden_size=args.hidden_size,
        image_dim=args.image_dim,
    )
    return TrainConfig(
        mode=args.mode,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        lambda_cls=args.lambda_cls,
        margin=args.margin,
        max_len=args.max_len,
        encoder=encoder,
        eval_pool_size=args.pool_size,
    )


def _load_split(workdir: str, split: str):
    from .corpus import load_corpus

    return load_corpus(os.path.join(workdir, f"{split}.jsonl"))


# -- subcommand implementations ---------------------------------------------------


def _cmd_ingest(args) -> int:
    from .corpus import load_corpus, save_corpus, split_corpus
    from .word2vec import train_word_embeddings

    started = time.time()
    data = _resolve(args.data)
    corpus = load_corpus(data, schema=args.schema)
    train_c, val_c, test_c = split_corpus(
        corpus, seed=args.seed, test_frac=args.test_frac, val_frac=args.val_frac
    )
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for split in (train_c, val_c, test_c):
        path = os.path.join(args.out, f"{split.split_tag}.jsonl")
        save_corpus(split, path)
        outputs.append(path)
    table = train_word_embeddings(
        train_c.texts(),
        dim=args.dim,
        window=args.window,
        min_freq=args.min_freq,
        seed=args.seed,
        epochs=args.w2v_epochs,
    )
    emb_path = os.path.join(args.out, "embeddings.npz")
    table.save(emb_path)
    outputs.append(emb_path)
    print(
        f"ingested {len(corpus)} pairs ({corpus.schema}): "
        f"train {len(train_c)} / val {len(val_c)} / test {len(test_c)}, "
        f"vocab {table.vocab.size}"
    )
    _write_manifest(args.out, "ingest", vars(args), [data], outputs, started)
    return 0


def _cmd_synth(args) -> int:
    from .corpus import save_corpus
    from .synthetic import generate_synthetic_corpus

    started = time.time()
    corpus = generate_synthetic_corpus(
        args.pairs, args.relations, args.signal, seed=args.seed
    )
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} synthetic pairs to {args.out}")
    _write_manifest(args.out, "synth", vars(args), [], [args.out], started)
    return 0


def _cmd_train(args) -> int:
    import torch

    from .trainer import save_checkpoint, train
    from .word2vec import EmbeddingTable

    started = time.time()
    torch.set_num_threads(args.threads)
    workdir = _resolve(args.workdir)
    train_c = _load_split(workdir, "train")
    val_c = _load_split(workdir, "val")
    table = EmbeddingTable.load(os.path.join(workdir, "embeddings.npz"))
    config = _train_config(args)
    model, checkpoints = train(config, train_c, val_c, table)
    save_checkpoint(args.out, model, checkpoints, config)
    best = checkpoints.best_epoch
    print(
        f"trained {args.mode} for {config.epochs} epochs; "
        f"best epoch {best} (val MedR {checkpoints.val_med_r[best]:.2f}) -> {args.out}"
    )
    _write_manifest(
        args.out,
        "train",
        vars(args),
        [os.path.join(workdir, "train.jsonl"), os.path.join(workdir, "embeddings.npz")],
        [args.out],
        started,
    )
    return 0


def _eval_report(args, with_refinement):
    from .retrieval import RefinementConfig
    from .trainer import evaluate_repeated, load_checkpoint

    model = load_checkpoint(_resolve(args.ckpt))
    corpus = _load_split(_resolve(args.workdir), args.split)
    refinement = None
    if with_refinement:
        refinement = RefinementConfig(lam=args.refine_lambda, threshold=args.threshold)
    seeds = list(range(args.seed, args.seed + args.repeats))
    report = evaluate_repeated(
        model,
        corpus,
        repeats=args.repeats,
        seeds=seeds,
        pool_size=args.pool_size,
        refinement=refinement,
    )
    return model, corpus, report


def _cmd_eval(args) -> int:
    started = time.time()
    _, _, report = _eval_report(args, args.refine)
    payload = report.to_dict()
    m = report.mean
    recalls = "  ".join(f"R@{k} {v:.1f}±{report.mean.recall_at_std[k]:.1f}" for k, v in m.recall_at.items())
    print(f"MedR {m.med_r:.2f}±{m.med_r_std:.2f}  {recalls}  (n={m.n_queries})")
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
        _write_manifest(args.out, "eval", vars(args), [os.path.join(_resolve(args.workdir), f"{args.split}.jsonl")], [args.out], started)
    return 0


def _cmd_sweep(args) -> int:
    import torch

    from .trainer import sweep
    from .word2vec import EmbeddingTable

    started = time.time()
    torch.set_num_threads(args.threads)
    workdir = _resolve(args.workdir)
    train_c = _load_split(workdir, "train")
    val_c = _load_split(workdir, "val")
    table = EmbeddingTable.load(os.path.join(workdir, "embeddings.npz"))
    values = [float(v) if args.param == "lambda_cls" else int(v) for v in args.values.split(",") if v != ""]
    rows = sweep(args.param, values, _train_config(args), train_c, val_c, table, repeats=args.repeats)
    with open(args.out, "w") as fh:
        fh.write("value,med_r_mean,med_r_std\n")
        for row in rows:
            fh.write(f"{row['value']},{row['med_r_mean']},{row['med_r_std']}\n")
    for row in rows:
        print(f"{args.param}={row['value']}: val MedR {row['med_r_mean']:.2f}±{row['med_r_std']:.2f}")
    _write_manifest(args.out, "sweep", vars(args), [], [args.out], started)
    return 0


def _cmd_report_relations(args) -> int:
    from .metrics import per_relation_metrics

    started = time.time()
    model, corpus, report = _eval_report(args, args.refine)
    labels_by_query = {p.pair_id: p.labels for p in corpus.pairs}
    out = {"split": args.split, "pool_size": args.pool_size, "relations": {}}
    for c, name in enumerate(corpus.vocab.names):
        per_repeat = []
        for rep in report.repeats:
            m = per_relation_metrics(rep.ranks_by_query, labels_by_query, c)
            per_repeat.append(None if m is None else m.to_dict())
        present = [m for m in per_repeat if m is not None]
        out["relations"][name] = {
            "per_repeat": per_repeat,
            "med_r_mean": (
                float(np.mean([m["med_r"] for m in present])) if present else None
            ),
        }
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
    for name, row in out["relations"].items():
        med = row["med_r_mean"]
        print(f"{name}: MedR {med:.2f}" if med is not None else f"{name}: absent")
    _write_manifest(args.out, "report-relations", vars(args), [], [args.out], started)
    return 0


def _cmd_dump_topk(args) -> int:
    from .retrieval import pool_seed, rank_images, sample_retrieval_pool
    from .trainer import load_checkpoint

    started = time.time()
    model_a = load_checkpoint(_resolve(args.ckpt))
    model_b = load_checkpoint(_resolve(args.baseline_ckpt))
    corpus = _load_split(_resolve(args.workdir), args.split)
    pair_ids = [p.pair_id for p in corpus.pairs]
    texts = [p.text for p in corpus.pairs]
    images = [p.image for p in corpus.pairs]

    rankings = {}
    for tag, model in (("model", model_a), ("baseline", model_b)):
        text_embs, _ = model.embed_texts(texts)
        image_embs = model.embed_images(images)
        t = text_embs.numpy().astype(np.float64)
        im = image_embs.numpy().astype(np.float64)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        im /= np.linalg.norm(im, axis=1, keepdims=True)
        sims = t @ im.T
        col = {pid: j for j, pid in enumerate(pair_ids)}
        rankings[tag] = {}
        for q, qid in enumerate(pair_ids):
            pool = sample_retrieval_pool(pair_ids, args.pool_size, pool_seed(args.seed, qid), qid)
            idx = np.array([col[p] for p in pool])
            rankings[tag][qid] = rank_images(sims[q, idx], pool, qid)

    attn = {r["pair_id"]: r for r in model_a.attention_report(corpus)}
    positive_relations = {
        p.pair_id: [n for n, y in zip(corpus.vocab.names, p.labels) if y]
        for p in corpus.pairs
    }
    with open(args.out, "w") as fh:
        for qid, text in zip(pair_ids, texts):
            rec = {
                "pair_id": qid,
                "caption": text,
                "ground_truth": qid,
                "relations": positive_relations[qid],
                "model_topk": list(rankings["model"][qid].ordered_ids[: args.k]),
                "baseline_topk": list(rankings["baseline"][qid].ordered_ids[: args.k]),
                "model_rank_of_truth": rankings["model"][qid].rank_of_truth,
                "baseline_rank_of_truth": rankings["baseline"][qid].rank_of_truth,
                "attention": {
                    "tokens": attn[qid]["tokens"],
                    "weights": attn[qid]["weights"],
                    "truncated": attn[qid]["truncated"],
                },
            }
            fh.write(json.dumps(rec) + "\n")
    print(f"dumped top-{args.k} listings for {len(pair_ids)} queries to {args.out}")
    _write_manifest(args.out, "dump-topk", vars(args), [], [args.out], started)
    return 0


def _cmd_humaneval_make(args) -> int:
    from .humaneval import make_pairwise_tasks, save_tasks

    started = time.time()
    dump_path = _resolve(args.dump)
    subject_top1, baseline_top1, captions, tags = {}, {}, {}, {}
    with open(dump_path) as fh:
        for line in fh:
            rec = json.loads(line)
            qid = rec["pair_id"]
            subject_top1[qid] = rec["model_topk"][0]
            baseline_top1[qid] = rec["baseline_topk"][0]
            captions[qid] = rec["caption"]
            tags[qid] = rec.get("relations", [])
    tasks = make_pairwise_tasks(
        subject_top1,
        baseline_top1,
        captions,
        relation_tags=tags if any(tags.values()) else None,
        relation_filter=args.relation,
        seed=args.seed,
    )
    save_tasks(tasks, args.out)
    print(f"wrote {len(tasks)} pairwise tasks to {args.out}")
    _write_manifest(args.out, "humaneval-make", vars(args), [dump_path], [args.out], started)
    return 0


def _cmd_humaneval_serve(args) -> int:
    import uvicorn

    from .humaneval import VoteStore, create_app, load_tasks

    tasks = load_tasks(_resolve(args.tasks))
    store = VoteStore(args.votes)
    app = create_app(tasks, store, raters_per_item=args.raters_per_item)
    print(f"serving {len(tasks)} tasks on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_humaneval_aggregate(args) -> int:
    from .humaneval import (
        aggregate_votes,
        load_tasks,
        load_votes,
        preference_indicators,
        preference_significance,
    )

    started = time.time()
    tasks = load_tasks(_resolve(args.tasks))
    votes = load_votes(_resolve(args.votes))
    result = aggregate_votes(votes, tasks, raters_per_item=args.raters_per_item)
    payload = result.to_dict()
    indicators = preference_indicators(result.counts)
    if np.count_nonzero(indicators) >= 2:
        t_stat, p_value = preference_significance(indicators)
        payload["t_statistic"] = t_stat
        payload["p_value"] = p_value
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
    pct = {k: round(v, 1) for k, v in result.percentages.items()}
    print(
        f"better {pct['better']}%  worse {pct['worse']}%  "
        f"both_good {pct['both_good']}%  both_bad {pct['both_bad']}%  "
        f"(no consensus {result.n_no_consensus}, incomplete {result.n_incomplete})"
    )
    _write_manifest(args.out, "humaneval-aggregate", vars(args), [_resolve(args.tasks), _resolve(args.votes)], [args.out], started)
    return 0


def _cmd_export_embeddings(args) -> int:
    from .retrieval import export_embeddings
    from .trainer import load_checkpoint

    started = time.time()
    model = load_checkpoint(_resolve(args.ckpt))
    corpus = _load_split(_resolve(args.workdir), args.split)
    text_embs, _ = model.embed_texts([p.text for p in corpus.pairs])
    image_embs = model.embed_images([p.image for p in corpus.pairs])
    ids = [p.pair_id for p in corpus.pairs]
    export_embeddings(args.out + ".text", ids, text_embs, normalized=False)
    export_embeddings(args.out + ".image", ids, image_embs, normalized=False)
    print(f"exported {len(ids)} text/image embedding rows to {args.out}.*")
    _write_manifest(args.out + ".text", "export-embeddings", vars(args), [], [args.out + ".text.bin", args.out + ".image.bin"], started)
    return 0


# -- parser ------------------------------------------------------------------------


def _add_train_flags(p):
    p.add_argument("--mode", default="cmcm",
                   help="base | cmca | cmcm | cmcm-noattn | cmcm-single:<relation>")
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-cls", type=float, default=0.1)
    p.add_argument("--margin", type=float, default=0.3)
    p.add_argument("--max-len", type=int, default=40)
    p.add_argument("--pool-size", type=int, default=500)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--backbone", default="toy-mlp", help="toy-mlp | pretrained-cnn")
    p.add_argument("--text-rnn", default="bilstm", help="bilstm | bigru | none")
    p.add_argument("--shared-dim", type=int, default=1024)
    p.add_argument("--hidden-size", type=int, default=1024)
    p.add_argument("--image-dim", type=int, default=32)


def _add_eval_flags(p):
    p.add_argument("--ckpt", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pool-size", type=int, default=500)
    p.add_argument("--refine", action="store_true")
    p.add_argument("--lambda", dest="refine_lambda", type=float, default=CITE_REFINE_LAMBDA)
    p.add_argument("--threshold", type=float, default=0.1)


def build_parser() -> _Parser:
    parser = _Parser(prog="cohret", description=__doc__)
    parser.add_argument("--config", default=None, help="JSON config file (flags override it)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a corpus, split it, build the vocab and word vectors")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", default=None, help="cite | clue | synthetic (default: manifest)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--dim", type=int, default=300)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--w2v-epochs", type=int, default=5)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic coherence corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=600)
    p.add_argument("--relations", type=int, default=4)
    p.add_argument("--signal", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--workdir", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="repeated retrieval evaluation")
    _add_eval_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="hyperparameter sweep vs validation MedR")
    p.add_argument("--workdir", required=True)
    p.add_argument("--param", required=True, choices=["lambda_cls", "max_seq_len"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=3)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report-relations", help="per-relation test metrics")
    _add_eval_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report_relations)

    p = sub.add_parser("dump-topk", help="per-query top-k listings for two models")
    p.add_argument("--ckpt", required=True, help="subject model checkpoint")
    p.add_argument("--baseline-ckpt", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--pool-size", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dump_topk)

    p = sub.add_parser("humaneval-make", help="build pairwise comparison tasks")
    p.add_argument("--dump", required=True, help="dump-topk output file")
    p.add_argument("--out", required=True)
    p.add_argument("--relation", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_humaneval_make)

    p = sub.add_parser("humaneval-serve", help="run the annotation HTTP service")
    p.add_argument("--tasks", required=True)
    p.add_argument("--votes", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--raters-per-item", type=int, default=3)
    p.set_defaults(func=_cmd_humaneval_serve)

    p = sub.add_parser("humaneval-aggregate", help="majority-vote aggregation and t-test")
    p.add_argument("--tasks", required=True)
    p.add_argument("--votes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--raters-per-item", type=int, default=3)
    p.set_defaults(func=_cmd_humaneval_aggregate)

    p = sub.add_parser("export-embeddings", help="write raw embedding matrices + manifests")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=_cmd_export_embeddings)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        defaults = {
            a.dest: a.default
            for sp in parser._subparsers._group_actions
            for a in sp.choices[args.command]._actions
        }
        args = _apply_config_file(args, defaults)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
