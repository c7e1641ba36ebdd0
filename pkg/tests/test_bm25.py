import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntmqa.bm25 import build_index, rank, score, score_all
from ntmqa.data import AnswerSet, load_corpus
from ntmqa.synth import RetrievalConfig, generate_retrieval

from oracles import brute_force_rank


def answers(*texts):
    return AnswerSet({f"d{i}": t.split() for i, t in enumerate(texts)})


def test_document_frequencies():
    index = build_index(answers("a b", "b c"))
    assert (index.df("a"), index.df("b"), index.df("c")) == (1, 2, 1)
    assert index.postings["b"] == [("d0", 1), ("d1", 1)]


def test_single_document_statistics():
    index = build_index(answers("x y z"))
    assert index.avgdl == 3
    # query term present once, dl = avgdl: idf * (k1+1) / (1+k1) with idf = ln(4/3)
    assert score(["y"], "d0", index) == pytest.approx(math.log(4 / 3) * 2.2 / 2.2, rel=1e-15)


def test_rebuild_is_identical():
    docs = answers("a b b", "c a", "d")
    assert build_index(docs) == build_index(docs)


def test_errors():
    with pytest.raises(ValueError):
        build_index(AnswerSet({}))
    with pytest.raises(KeyError):
        score(["a"], "nope", build_index(answers("a")))


def test_no_overlap_scores_zero():
    index = build_index(answers("a b", "c d"))
    assert score(["z"], "d0", index) == 0.0


def test_duplicate_query_terms_count_twice():
    index = build_index(answers("a b", "c d", "e"))
    assert score(["a", "a"], "d0", index) == pytest.approx(2 * score(["a"], "d0", index))


def test_unknown_query_orders_by_id():
    index = build_index(answers("a", "b", "c"))
    assert rank(["zzz"], index) == [("d0", 0.0), ("d1", 0.0), ("d2", 0.0)]


def test_rank_matches_brute_force_on_fifty_docs():
    rng = np.random.default_rng(1)
    vocab = [f"w{i}" for i in range(30)]
    docs = {f"x{i:02d}": list(rng.choice(vocab, size=rng.integers(1, 12))) for i in range(50)}
    index = build_index(AnswerSet(docs))
    for _ in range(20):
        q = list(rng.choice(vocab, size=4))
        assert rank(q, index) == brute_force_rank(q, docs)


def test_noiseless_synthetic_ranks_gold_first(tmp_path):
    generate_retrieval(tmp_path, RetrievalConfig(noise=0.0), np.random.default_rng(0))
    corpus = load_corpus(tmp_path)
    index = build_index(corpus.answers)
    for pair in corpus.train + corpus.test:
        assert rank(pair.question, index, top_k=1)[0][0] == pair.answer_id


def test_score_matches_score_all():
    docs = answers("a b a", "b c", "c c d a")
    index = build_index(docs)
    q = ["a", "c", "a"]
    table = score_all(q, index)
    for aid in docs.ids:
        assert score(q, aid, index) == table[aid]


doc_lists = st.lists(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=8), min_size=1, max_size=8)


@settings(max_examples=150)
@given(doc_lists, st.lists(st.sampled_from("abcdefg"), max_size=5))
def test_scores_nonnegative(docs, query):
    index = build_index(AnswerSet({f"d{i}": d for i, d in enumerate(docs)}))
    assert all(s >= 0 for _, s in rank(query, index))


@settings(max_examples=150)
@given(doc_lists, st.sampled_from("abcdef"), st.data())
def test_adding_query_term_never_lowers_score(docs, term, data):
    i = data.draw(st.integers(0, len(docs) - 1))
    before = build_index(AnswerSet({f"d{j}": d for j, d in enumerate(docs)}))
    grown = [list(d) for d in docs]
    if term not in grown[i]:
        # a new df changes idf for every document; only compare tf growth
        grown[i].append(term)
        before = build_index(AnswerSet({f"d{j}": d for j, d in enumerate(grown)}))
    grown2 = [list(d) for d in grown]
    grown2[i] = grown2[i] + [term]
    after = build_index(AnswerSet({f"d{j}": d for j, d in enumerate(grown2)}))
    # growing the document also raises avgdl; hold it fixed to isolate the term count
    after.avgdl = before.avgdl
    after.doc_len[f"d{i}"] = before.doc_len[f"d{i}"]
    assert score([term], f"d{i}", after) >= score([term], f"d{i}", before)
