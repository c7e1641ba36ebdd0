import json

import numpy as np
import pytest

from ntmqa.cgnn import CgnnConfig, CgnnModel
from ntmqa.checkpoint import file_digest, load_checkpoint
from ntmqa.cli import main
from ntmqa.data import load_corpus, load_embeddings

SMALL_CGNN = ["--widths", "2", "--channels", "6", "--embed-dim", "16", "--n-max", "16", "--negatives", "3",
              "--batch-size", "16"]
SMALL_NTM = ["--controller", "16", "--heads", "1", "--slots", "16", "--width", "8"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def retrieval_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert run("synth", "retrieval", "--out", d, "--seed", 0, "--n-topics", 4) == 0
    return d


@pytest.fixture(scope="module")
def fewshot_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fewshot")
    assert run("synth", "fewshot", "--out", d, "--seed", 0, "--dim", 8, "--noise", 0.5) == 0
    return d


def test_synth_is_reproducible(tmp_path):
    run("synth", "retrieval", "--out", tmp_path / "a", "--seed", 3, "--n-topics", 2)
    run("synth", "retrieval", "--out", tmp_path / "b", "--seed", 3, "--n-topics", 2)
    for name in ("answers.jsonl", "qa_train.jsonl", "qa_test.jsonl", "embeddings.txt", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_commands_require_seed(tmp_path, fewshot_dir, capsys):
    assert run("train-labeler", "--pool", fewshot_dir / "fewshot_train.jsonl", "--out", tmp_path) == 1
    assert "--seed" in capsys.readouterr().err


def test_missing_embeddings_fails_before_training(tmp_path, retrieval_dir, capsys):
    code = run("train-retriever", "--data", retrieval_dir, "--embeddings", tmp_path / "nope.txt",
               "--seed", 1, "--out", tmp_path / "out")
    assert code == 1
    assert "embeddings file not found" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_labeler_training_is_reproducible(tmp_path, fewshot_dir):
    digests = []
    for run_id in range(2):
        out = tmp_path / f"r{run_id}"
        assert run("train-labeler", "--pool", fewshot_dir / "fewshot_train.jsonl", "--test-pool",
                   fewshot_dir / "fewshot_test.jsonl", "--shots", 2, "--episodes", 64, "--eval-every", 32,
                   "--eval-episodes", 4, "--lr", 0.1, "--seed", 42, "--out", out, *SMALL_NTM) == 0
        digests.append(file_digest(out / "labeler.ckpt"))
        curve = [json.loads(line) for line in (out / "curve.jsonl").read_text().splitlines()]
        assert [r["episode_index"] for r in curve] == [32, 64]
    assert digests[0] == digests[1]
    assert (tmp_path / "r0" / "curve.jsonl").read_bytes() == (tmp_path / "r1" / "curve.jsonl").read_bytes()


def test_labeler_rejects_thin_class(tmp_path, capsys):
    pool = tmp_path / "pool.jsonl"
    rows = [{"vector": [float(i), 1.0], "label": lab} for i, lab in
            enumerate(["background"] * 3 + ["cause"] * 3 + ["claim"] * 3 + ["fact"] * 3 + ["influence"])]
    pool.write_text("".join(json.dumps(r) + "\n" for r in rows))
    assert run("train-labeler", "--pool", pool, "--shots", 2, "--seed", 0, "--out", tmp_path / "o") == 1
    assert "influence" in capsys.readouterr().err


def test_conflicting_label_flags(tmp_path, retrieval_dir, capsys):
    code = run("train-retriever", "--data", retrieval_dir, "--seed", 0, "--no-labels", "--oracle-labels",
               "--out", tmp_path)
    assert code == 1 and "conflicting" in capsys.readouterr().err


def test_zero_epochs_checkpoint_equals_initialization(tmp_path, retrieval_dir):
    assert run("train-retriever", "--data", retrieval_dir, "--seed", 5, "--epochs", 0, "--out", tmp_path,
               *SMALL_CGNN) == 0
    _, _, saved = load_checkpoint(tmp_path / "retriever.ckpt")
    corpus = load_corpus(retrieval_dir)
    vocab, table = load_embeddings(retrieval_dir / "embeddings.txt", "fixed", corpus.tokens())
    cfg = CgnnConfig(widths=[2], channels=6, embed_dim=16, n_max=16, negatives=3, batch_size=16, epochs=0)
    fresh = CgnnModel(cfg, vocab, table, np.random.default_rng(5))
    for name, t in fresh.named_parameters().items():
        assert saved[name].tobytes() == t.data.tobytes()


def _trace_without_timing(path):
    return [{k: v for k, v in json.loads(line).items() if k != "wall_seconds"}
            for line in path.read_text().splitlines()]


def test_retriever_runs_are_reproducible(tmp_path, retrieval_dir):
    for run_id in range(2):
        assert run("train-retriever", "--data", retrieval_dir, "--seed", 9, "--epochs", 2, "--oracle-labels",
                   "--out", tmp_path / f"r{run_id}", *SMALL_CGNN) == 0
    a, b = tmp_path / "r0", tmp_path / "r1"
    assert (a / "retriever.ckpt").read_bytes() == (b / "retriever.ckpt").read_bytes()
    assert _trace_without_timing(a / "loss_trace.jsonl") == _trace_without_timing(b / "loss_trace.jsonl")
    assert len(_trace_without_timing(a / "loss_trace.jsonl")) == 2


def test_evaluate_bm25_noiseless(tmp_path, retrieval_dir, capsys):
    assert run("evaluate", "--scorer", "bm25", "--data", retrieval_dir, "--k", 1, "--json", "--out", tmp_path) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["f1"] == 100.0 and report["k"] == 1
    assert sorted(report["per_class"]) == ["background", "cause", "claim", "fact", "influence"]
    assert json.loads((tmp_path / "report.json").read_text()) == report


def test_evaluate_untrained_cgnn_and_kind_mismatch(tmp_path, retrieval_dir, fewshot_dir, capsys):
    run("train-retriever", "--data", retrieval_dir, "--seed", 1, "--epochs", 0, "--out", tmp_path, *SMALL_CGNN)
    capsys.readouterr()
    assert run("evaluate", "--checkpoint", tmp_path / "retriever.ckpt", "--data", retrieval_dir,
               "--json", "--out", tmp_path / "ev") == 0
    report = json.loads(capsys.readouterr().out)
    assert all(np.isfinite([report["precision"], report["recall"], report["f1"]]))
    assert run("evaluate", "--checkpoint", tmp_path / "retriever.ckpt", "--scorer", "ntm", "--pool",
               fewshot_dir / "fewshot_train.jsonl", "--out", tmp_path / "ev2") == 1
    assert "cgnn" in capsys.readouterr().err


def test_retrieve_single_answer_corpus(tmp_path):
    d = tmp_path / "one"
    d.mkdir()
    (d / "answers.jsonl").write_text(json.dumps({"id": "only", "text": "sun hot"}) + "\n")
    for split in ("train", "test"):
        (d / f"qa_{split}.jsonl").write_text(json.dumps({"qid": f"q{split}", "question": "sun",
                                                         "answer_id": "only"}) + "\n")
    (d / "embeddings.txt").write_text("2 2\nsun 1 0\nhot 0 1\n")
    assert run("retrieve", "--scorer", "bm25", "--data", d, "--question", "sun", "--top", 1, "--json",
               "--out", tmp_path) == 0


def test_retrieve_with_cgnn(tmp_path, retrieval_dir, capsys):
    run("train-retriever", "--data", retrieval_dir, "--seed", 1, "--epochs", 1, "--oracle-labels", "--out",
        tmp_path, *SMALL_CGNN)
    capsys.readouterr()
    assert run("retrieve", "--checkpoint", tmp_path / "retriever.ckpt", "--data", retrieval_dir,
               "--question", "t0w1 t0w2", "--label", "fact", "--top", 3, "--json") == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["results"]) == 3
    assert run("retrieve", "--checkpoint", tmp_path / "retriever.ckpt", "--data", retrieval_dir,
               "--question", "t0w1") == 1


def test_heatmap_has_both_sides(tmp_path, retrieval_dir):
    run("train-retriever", "--data", retrieval_dir, "--seed", 1, "--epochs", 0, "--out", tmp_path, *SMALL_CGNN)
    qid = load_corpus(retrieval_dir).test[0].qid
    assert run("heatmap", "--checkpoint", tmp_path / "retriever.ckpt", "--data", retrieval_dir, "--qid", qid,
               "--out", tmp_path) == 0
    records = [json.loads(x) for x in (tmp_path / f"heatmap_{qid}.jsonl").read_text().splitlines()]
    assert [r["side"] for r in records] == ["question", "answer"]
    for r in records:
        assert len(r["tokens"]) == len(r["weights"]) and max(r["weights"]) == 1.0


def test_gradcheck_command(capsys):
    assert run("gradcheck", "--module", "cgnn", "--tolerance", "1e-4") == 0
    assert "PASS" in capsys.readouterr().out


def test_labeler_pipeline_end_to_end(tmp_path, retrieval_dir, capsys):
    lab = tmp_path / "lab"
    assert run("train-labeler", "--data", retrieval_dir, "--shots", 2, "--episodes", 32, "--eval-every", 0,
               "--seed", 0, "--out", lab, *SMALL_NTM) == 0
    ret = tmp_path / "ret"
    capsys.readouterr()
    assert run("train-retriever", "--data", retrieval_dir, "--labeler", lab / "labeler.ckpt", "--support-shots", 2,
               "--epochs", 1, "--seed", 0, "--out", ret, "--json", *SMALL_CGNN) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["labels"] == "labeler" and 0.0 <= summary["label_agreement"] <= 1.0
    assert (ret / "train_labels.jsonl").exists()
    assert run("evaluate", "--checkpoint", ret / "retriever.ckpt", "--data", retrieval_dir,
               "--labeler", lab / "labeler.ckpt", "--support-shots", 2, "--out", ret) == 0
    assert run("evaluate", "--checkpoint", lab / "labeler.ckpt", "--data", retrieval_dir, "--shots", 1,
               "--episodes", 4, "--out", lab) == 0


def test_config_file_overrides_flags(tmp_path, retrieval_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "channels": 4, "widths": [3]}))
    assert run("train-retriever", "--data", retrieval_dir, "--seed", 0, "--config", cfg, "--epochs", 5,
               "--out", tmp_path, *SMALL_CGNN) == 0
    _, config, _ = load_checkpoint(tmp_path / "retriever.ckpt")
    assert config["epochs"] == 1 and config["channels"] == 4 and config["widths"] == [3]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert run("train-retriever", "--data", retrieval_dir, "--seed", 0, "--config", bad, "--out", tmp_path) == 1
