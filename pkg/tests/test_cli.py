import json
import os

import pytest

from cohret.cli import run


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> ingest -> train (two variants) shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus = str(root / "corpus.jsonl")
    workdir = str(root / "work")
    assert run(["synth", "--out", corpus, "--pairs", "80", "--relations", "3",
                "--signal", "0.9", "--seed", "3"]) == 0
    assert run(["ingest", "--data", corpus, "--out", workdir, "--seed", "3",
                "--dim", "48", "--window", "4", "--w2v-epochs", "2"]) == 0
    common = ["--workdir", workdir, "--epochs", "2", "--batch-size", "16",
              "--learning-rate", "0.002", "--max-len", "16",
              "--shared-dim", "24", "--hidden-size", "16", "--seed", "3"]
    ckpt_a = str(root / "ckpt_cmcm")
    ckpt_b = str(root / "ckpt_cmca")
    assert run(["train", "--mode", "cmcm", "--out", ckpt_a] + common) == 0
    assert run(["train", "--mode", "cmca", "--out", ckpt_b] + common) == 0
    return root, corpus, workdir, ckpt_a, ckpt_b


def test_synth_outputs_files(pipeline):
    root, corpus, *_ = pipeline
    assert os.path.exists(corpus)
    assert os.path.exists(corpus.replace(".jsonl", ".manifest.json"))
    assert os.path.exists(corpus + ".run.json")


def test_ingest_outputs(pipeline):
    _, _, workdir, *_ = pipeline
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "embeddings.npz", "run_manifest.json"):
        assert os.path.exists(os.path.join(workdir, name))


def test_train_writes_checkpoint_and_manifest(pipeline):
    *_, ckpt_a, _ = pipeline
    for name in ("model.pt", "manifest.json", "embeddings.npz", "history.json", "run_manifest.json"):
        assert os.path.exists(os.path.join(ckpt_a, name))


def test_eval_plain_and_refined(pipeline, tmp_path):
    root, _, workdir, ckpt_a, _ = pipeline
    out = str(tmp_path / "eval.json")
    code = run(["eval", "--ckpt", ckpt_a, "--workdir", workdir, "--repeats", "2",
                "--pool-size", "10", "--out", out])
    assert code == 0
    report = json.load(open(out))
    assert report["refinement"] is None
    assert len(report["repeats"]) == 2

    out2 = str(tmp_path / "eval_refined.json")
    code = run(["eval", "--ckpt", ckpt_a, "--workdir", workdir, "--repeats", "2",
                "--pool-size", "10", "--refine", "--lambda", "0.13",
                "--threshold", "0.1", "--out", out2])
    assert code == 0
    report = json.load(open(out2))
    assert report["refinement"] == {"lam": 0.13, "threshold": 0.1}


def test_eval_refine_rejected_for_agnostic(pipeline, tmp_path):
    _, _, workdir, _, ckpt_b = pipeline
    code = run(["eval", "--ckpt", ckpt_b, "--workdir", workdir, "--repeats", "1",
                "--pool-size", "10", "--refine"])
    assert code == 2  # runtime failure: no coherence head


def test_report_relations(pipeline, tmp_path):
    _, _, workdir, ckpt_a, _ = pipeline
    out = str(tmp_path / "relations.json")
    code = run(["report-relations", "--ckpt", ckpt_a, "--workdir", workdir,
                "--repeats", "1", "--pool-size", "10", "--out", out])
    assert code == 0
    data = json.load(open(out))
    assert set(data["relations"]) == {"R0", "R1", "R2"}


def test_dump_topk_and_humaneval_flow(pipeline, tmp_path):
    _, _, workdir, ckpt_a, ckpt_b = pipeline
    dump = str(tmp_path / "dump.jsonl")
    code = run(["dump-topk", "--ckpt", ckpt_a, "--baseline-ckpt", ckpt_b,
                "--workdir", workdir, "--k", "5", "--pool-size", "10", "--out", dump])
    assert code == 0
    recs = [json.loads(l) for l in open(dump)]
    assert all(len(r["model_topk"]) == 5 for r in recs)
    assert all(len(r["baseline_topk"]) == 5 for r in recs)
    assert all(len(r["attention"]["tokens"]) == len(r["attention"]["weights"]) for r in recs)

    tasks = str(tmp_path / "tasks.jsonl")
    assert run(["humaneval-make", "--dump", dump, "--out", tasks, "--seed", "1"]) == 0
    task_lines = [json.loads(l) for l in open(tasks)]
    assert len(task_lines) == len(recs)

    votes = str(tmp_path / "votes.jsonl")
    with open(votes, "w") as fh:
        for t in task_lines:
            for i, choice in enumerate(("prefer_A", "prefer_A", "same")):
                fh.write(json.dumps({"task_id": t["task_id"], "rater_id": f"r{i}",
                                     "choice": choice, "timestamp": float(i)}) + "\n")
    agg = str(tmp_path / "agg.json")
    assert run(["humaneval-aggregate", "--tasks", tasks, "--votes", votes,
                "--out", agg]) == 0
    result = json.load(open(agg))
    assert result["n_items"] == len(task_lines)
    assert sum(result["counts"].values()) == len(task_lines)
    assert "t_statistic" in result


def test_export_embeddings(pipeline, tmp_path):
    _, _, workdir, ckpt_a, _ = pipeline
    prefix = str(tmp_path / "embs")
    code = run(["export-embeddings", "--ckpt", ckpt_a, "--workdir", workdir,
                "--split", "test", "--out", prefix])
    assert code == 0
    from cohret.retrieval import import_embeddings

    ids, text_mat, _ = import_embeddings(prefix + ".text")
    ids_i, image_mat, _ = import_embeddings(prefix + ".image")
    assert ids == ids_i
    assert text_mat.shape == image_mat.shape == (len(ids), 24)


def test_sweep_csv(pipeline, tmp_path):
    _, _, workdir, *_ = pipeline
    out = str(tmp_path / "sweep.csv")
    code = run(["sweep", "--workdir", workdir, "--param", "lambda_cls",
                "--values", "0.0,0.1", "--out", out, "--repeats", "1",
                "--epochs", "1", "--batch-size", "16", "--max-len", "16",
                "--shared-dim", "24", "--hidden-size", "16", "--pool-size", "10"])
    assert code == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "value,med_r_mean,med_r_std"
    assert len(lines) == 3


def test_train_single_relation_variant(pipeline, tmp_path):
    _, _, workdir, *_ = pipeline
    ckpt = str(tmp_path / "ckpt_single")
    code = run(["train", "--mode", "cmcm-single:R1", "--out", ckpt,
                "--workdir", workdir, "--epochs", "1", "--batch-size", "16",
                "--max-len", "16", "--shared-dim", "24", "--hidden-size", "16"])
    assert code == 0
    from cohret.trainer import load_checkpoint

    model = load_checkpoint(ckpt)
    assert model.head_relations == ("R1",)
    assert model.head.fc.out_features == 1


def test_usage_errors_exit_one():
    assert run(["no-such-command"]) == 1
    assert run(["train"]) == 1  # missing required flags
    assert run([]) == 1


def test_runtime_errors_exit_two(tmp_path):
    assert run(["ingest", "--data", str(tmp_path / "missing.jsonl"),
                "--out", str(tmp_path / "w")]) == 2


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"pairs": 40, "relations": 5, "seed": 9}))
    out = str(tmp_path / "c.jsonl")
    # --pairs on the command line beats the config file; relations comes from config
    assert run(["--config", str(cfg), "synth", "--out", out, "--pairs", "20"]) == 0
    manifest = json.load(open(tmp_path / "c.manifest.json"))
    assert manifest["n_pairs"] == 20
    assert len(manifest["relations"]) == 5


def test_data_root_env_var(tmp_path, monkeypatch):
    corpus = str(tmp_path / "root" / "corp.jsonl")
    os.makedirs(tmp_path / "root", exist_ok=True)
    assert run(["synth", "--out", corpus, "--pairs", "20", "--relations", "2",
                "--signal", "0.5", "--seed", "1"]) == 0
    monkeypatch.setenv("COHRET_DATA_ROOT", str(tmp_path / "root"))
    workdir = str(tmp_path / "w")
    assert run(["ingest", "--data", "corp.jsonl", "--out", workdir,
                "--dim", "16", "--w2v-epochs", "1"]) == 0
    assert os.path.exists(os.path.join(workdir, "test.jsonl"))


def test_run_manifest_contents(pipeline):
    root, corpus, workdir, *_ = pipeline
    manifest = json.load(open(os.path.join(workdir, "run_manifest.json")))
    assert manifest["command"] == "ingest"
    assert corpus in manifest["input_hashes"]
    assert manifest["finished_at"] >= manifest["started_at"]
    assert manifest["config"]["seed"] == 3


def test_reruns_reproduce_outputs(tmp_path):
    import hashlib

    def digest(path):
        return hashlib.sha256(open(path, "rb").read()).hexdigest()

    args = ["--pairs", "30", "--relations", "2", "--signal", "0.6", "--seed", "11"]
    a, b = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
    assert run(["synth", "--out", a] + args) == 0
    assert run(["synth", "--out", b] + args) == 0
    assert digest(a) == digest(b)

    wa, wb = str(tmp_path / "wa"), str(tmp_path / "wb")
    ingest = ["--seed", "1", "--dim", "16", "--window", "3", "--w2v-epochs", "1"]
    assert run(["ingest", "--data", a, "--out", wa] + ingest) == 0
    assert run(["ingest", "--data", a, "--out", wb] + ingest) == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "embeddings.npz"):
        assert digest(os.path.join(wa, name)) == digest(os.path.join(wb, name))
