import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ntmqa.data import (PAD, UNK, AnswerSet, DataError, LabelClass, LabeledPool, QaPair, Vocab,
                        encode_sequence, load_answers, load_corpus, load_embeddings, load_pool, load_qa,
                        negative_sample, sample_episode, save_embeddings)
from ntmqa.synth import FewshotConfig, RetrievalConfig, generate_fewshot, generate_retrieval, generate_synthetic


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def tiny_corpus(tmp_path):
    write_lines(tmp_path / "answers.jsonl", [{"id": "a1", "text": "red apple"}, {"id": "a2", "text": "blue sky"}])
    write_lines(tmp_path / "qa_train.jsonl", [{"qid": "q1", "question": "what apple", "answer_id": "a1",
                                               "label": "fact"}])
    write_lines(tmp_path / "qa_test.jsonl", [{"qid": "q2", "question": "which sky", "answer_id": "a2"}])
    return tmp_path


def test_label_classes():
    assert [c.label for c in LabelClass] == ["background", "cause", "claim", "fact", "influence"]
    assert LabelClass.parse(" Claim ") is LabelClass.CLAIM
    np.testing.assert_array_equal(LabelClass.FACT.one_hot(), [0, 0, 0, 1, 0])
    with pytest.raises(DataError):
        LabelClass.parse("opinion")


def test_load_corpus(tiny_corpus):
    corpus = load_corpus(tiny_corpus)
    assert corpus.answers.ids == ["a1", "a2"]
    assert len(corpus.train) == 1 and corpus.train[0].label is LabelClass.FACT
    assert corpus.test[0].label is None
    assert corpus.test_answer_ids() == ["a2"]


def test_dangling_answer_names_the_id(tmp_path, tiny_corpus):
    answers = load_answers(tiny_corpus / "answers.jsonl")
    bad = write_lines(tmp_path / "bad.jsonl", [{"qid": "q", "question": "x", "answer_id": "a9"}])
    with pytest.raises(DataError, match="a9"):
        load_qa(bad, answers)


@pytest.mark.parametrize("records, line", [
    ([{"id": "a1", "text": "x"}, {"id": "a1", "text": "y"}], 2),
    ([{"id": "a1", "text": "x"}, {"id": "a2"}], 2),
    ([{"id": "a1", "text": ""}], 1),
])
def test_answer_loader_reports_line(tmp_path, records, line):
    path = write_lines(tmp_path / "answers.jsonl", records)
    with pytest.raises(DataError, match=f":{line}:"):
        load_answers(path)


def test_malformed_json_line(tmp_path):
    path = tmp_path / "answers.jsonl"
    path.write_text('{"id": "a1", "text": "x"}\n{not json\n')
    with pytest.raises(DataError, match=":2:"):
        load_answers(path)


def test_bad_label_and_duplicate_qid(tmp_path, tiny_corpus):
    answers = load_answers(tiny_corpus / "answers.jsonl")
    bad = write_lines(tmp_path / "q.jsonl", [{"qid": "q", "question": "x", "answer_id": "a1", "label": "opinion"}])
    with pytest.raises(DataError, match=":1:"):
        load_qa(bad, answers)
    dup = write_lines(tmp_path / "d.jsonl", [{"qid": "q", "question": "x", "answer_id": "a1"}] * 2)
    with pytest.raises(DataError, match="duplicate qid"):
        load_qa(dup, answers)


# -- embeddings --------------------------------------------------------------

def test_embedding_table_has_reserved_rows(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("2 3\nred 1 2 3\nblue 4 5 6\n")
    vocab, table = load_embeddings(path)
    assert table.matrix.shape == (4, 3)
    assert vocab.itos[:2] == ["<pad>", "<unk>"]
    np.testing.assert_array_equal(table.matrix[vocab.index("blue")], [4, 5, 6])
    np.testing.assert_array_equal(table.matrix[PAD], 0.0)


def test_duplicate_embedding_last_wins(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("2 2\nred 1 1\nred 2 2\n")
    with pytest.warns(UserWarning, match="duplicate"):
        vocab, table = load_embeddings(path)
    np.testing.assert_array_equal(table.matrix[vocab.index("red")], [2, 2])


def test_inconsistent_dimension_rejected(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("2 3\nred 1 2 3\nblue 4 5\n")
    with pytest.raises(DataError, match=":3:"):
        load_embeddings(path)


def test_vocab_policies(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("1 2\nred 1 1\n")
    vocab, table = load_embeddings(path, "fixed", corpus_tokens=["red", "green"])
    assert vocab.index("green") == UNK and len(vocab) == 3
    vocab, table = load_embeddings(path, "extend", corpus_tokens=["red", "green"], rng=np.random.default_rng(0))
    row = table.matrix[vocab.index("green")]
    assert vocab.index("green") == 3 and np.all(np.abs(row) <= 0.1)


def test_two_hundred_dim_file(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "e.txt"
    save_embeddings(path, ["a", "b"], rng.normal(size=(2, 200)))
    _, table = load_embeddings(path)
    assert table.dim == 200


def test_save_load_round_trip_exact(tmp_path):
    m = np.random.default_rng(1).normal(size=(3, 4))
    save_embeddings(tmp_path / "e.txt", ["x", "y", "z"], m)
    vocab, table = load_embeddings(tmp_path / "e.txt")
    np.testing.assert_array_equal(table.matrix[2:], m)


# -- encoding ----------------------------------------------------------------

def test_encode_examples():
    vocab = Vocab(["a", "b", "c"])
    np.testing.assert_array_equal(encode_sequence(["a", "b", "c"], vocab, 5), [2, 3, 4, 0, 0])
    assert encode_sequence(["zzz"], vocab, 3)[0] == UNK
    long = ["a"] * 100 + ["b"] * 20
    out = encode_sequence(long, vocab, 100)
    assert len(out) == 100 and np.all(out == 2)


def test_encode_empty_warns():
    with pytest.warns(UserWarning):
        out = encode_sequence([], Vocab(), 4)
    np.testing.assert_array_equal(out, [0, 0, 0, 0])
    with pytest.raises(ValueError):
        encode_sequence(["a"], Vocab(), 0)


@settings(max_examples=100)
@given(st.lists(st.sampled_from(["a", "b", "c", "oov"]), max_size=20), st.integers(1, 15))
def test_encode_length_and_padding_suffix(tokens, n_max):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = encode_sequence(tokens, Vocab(["a", "b", "c"]), n_max)
    assert len(out) == n_max
    real = np.flatnonzero(out != PAD)
    assert len(real) == min(len(tokens), n_max)
    if len(real):
        assert real[-1] == len(real) - 1


# -- negative sampling -------------------------------------------------------

def _answers(n):
    return AnswerSet({f"a{i}": ["t"] for i in range(n)})


def test_negative_sample_examples():
    pair = QaPair("q", ["t"], "a0")
    negs = negative_sample(pair, _answers(30), 20, np.random.default_rng(0))
    assert len(set(negs)) == 20 and "a0" not in negs
    assert negative_sample(pair, _answers(2), 1, np.random.default_rng(0)) == ["a1"]
    assert negs == negative_sample(pair, _answers(30), 20, np.random.default_rng(0))
    with pytest.raises(ValueError):
        negative_sample(pair, _answers(2), 2, np.random.default_rng(0))


def test_negative_sample_is_uniform():
    pair = QaPair("q", ["t"], "a0")
    answers = _answers(10)
    rng = np.random.default_rng(123)
    counts = {f"a{i}": 0 for i in range(1, 10)}
    for _ in range(100_000):
        counts[negative_sample(pair, answers, 1, rng)[0]] += 1
    assert stats.chisquare(list(counts.values())).pvalue > 0.01


# -- episodes ----------------------------------------------------------------

def _pool(per_class, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(5), per_class)
    return LabeledPool(rng.normal(size=(len(labels), dim)), labels)


@pytest.mark.parametrize("shots", [1, 2, 5, 10])
def test_episode_composition(shots):
    ep = sample_episode(_pool(12), shots, 1, np.random.default_rng(0))
    assert len(ep.support_y) == 5 * shots
    assert np.bincount(ep.support_y, minlength=5).tolist() == [shots] * 5
    support = {tuple(v) for v in ep.support_x}
    assert not support & {tuple(v) for v in ep.query_x}


def test_episode_is_shuffled_and_deterministic():
    a = sample_episode(_pool(12), 10, 1, np.random.default_rng(4))
    b = sample_episode(_pool(12), 10, 1, np.random.default_rng(4))
    np.testing.assert_array_equal(a.support_x, b.support_x)
    assert not np.all(np.diff(a.support_y) >= 0)


def test_episode_names_deficient_class():
    pool = LabeledPool(np.zeros((9, 2)), np.array([0, 0, 1, 1, 2, 2, 3, 3, 4]))
    with pytest.raises(DataError, match="influence"):
        sample_episode(pool, 2, 0, np.random.default_rng(0))


def test_load_pool_errors(tmp_path):
    path = write_lines(tmp_path / "p.jsonl", [{"vector": [1, 2], "label": "fact"}, {"vector": [1], "label": "fact"}])
    with pytest.raises(DataError, match=":2:"):
        load_pool(path)


# -- synthetic data ----------------------------------------------------------

def _nearest_centroid(train, test):
    centroids = np.stack([train.vectors[train.labels == c].mean(axis=0) for c in range(5)])
    d = ((test.vectors[:, None, :] - centroids[None]) ** 2).sum(-1)
    return float(np.mean(d.argmin(axis=1) == test.labels))


def test_fewshot_well_separated_is_centroid_separable(tmp_path):
    generate_fewshot(tmp_path, FewshotConfig(separation=8.0, noise=0.5), np.random.default_rng(0))
    acc = _nearest_centroid(load_pool(tmp_path / "fewshot_train.jsonl"), load_pool(tmp_path / "fewshot_test.jsonl"))
    assert acc >= 0.99


def test_fewshot_degenerate_config_warns(tmp_path):
    with pytest.warns(UserWarning):
        generate_fewshot(tmp_path, FewshotConfig(separation=0.0, noise=0.0), np.random.default_rng(0))


def test_synthetic_files_byte_identical(tmp_path):
    for task in ("fewshot", "retrieval"):
        a = generate_synthetic(task, tmp_path / f"{task}1", rng=np.random.default_rng(3))
        b = generate_synthetic(task, tmp_path / f"{task}2", rng=np.random.default_rng(3))
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes()
    with pytest.raises(ValueError):
        generate_synthetic("bogus", tmp_path / "x")


def test_retrieval_corpus_structure(tmp_path):
    generate_retrieval(tmp_path, RetrievalConfig(), np.random.default_rng(0))
    corpus = load_corpus(tmp_path)
    assert all(p.label is not None for p in corpus.train + corpus.test)
    for pair in corpus.train:
        markers = [t for t in pair.question if t.startswith("m") and "q" in t]
        assert len(markers) == 1 and int(markers[0][1]) == int(pair.label)
    vocab, _ = load_embeddings(tmp_path / "embeddings.txt")
    assert all(t in vocab for t in corpus.tokens())
