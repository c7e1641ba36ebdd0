"""Okapi BM25 over an inverted index (the word-form matching baseline)."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .data import AnswerSet


@dataclass
class InvertedIndex:
    postings: dict = field(default_factory=dict)   # token -> [(answer_id, tf)] sorted by id
    doc_len: dict = field(default_factory=dict)    # answer_id -> length
    avgdl: float = 0.0

    @property
    def n_docs(self) -> int:
        return len(self.doc_len)

    def df(self, token: str) -> int:
        return len(self.postings.get(token, ()))

    def idf(self, token: str) -> float:
        df = self.df(token)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def build_index(answers: AnswerSet) -> InvertedIndex:
    if len(answers) == 0:
        raise ValueError("cannot index an empty answer set")
    index = InvertedIndex()
    for aid in sorted(answers.ids):
        tokens = answers[aid]
        index.doc_len[aid] = len(tokens)
        for tok, tf in sorted(Counter(tokens).items()):
            index.postings.setdefault(tok, []).append((aid, tf))
    index.avgdl = sum(index.doc_len.values()) / len(index.doc_len)
    return index


def _term_score(idf: float, tf: int, dl: int, avgdl: float, k1: float, b: float) -> float:
    return idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))


def score(question: Sequence[str], answer_id: str, index: InvertedIndex,
          k1: float = 1.2, b: float = 0.75) -> float:
    """BM25 of one answer; repeated query tokens each contribute."""
    if answer_id not in index.doc_len:
        raise KeyError(f"unknown answer id {answer_id!r}")
    dl = index.doc_len[answer_id]
    total = 0.0
    for tok in question:
        tf = dict(index.postings.get(tok, ())).get(answer_id, 0)
        if tf:
            total += _term_score(index.idf(tok), tf, dl, index.avgdl, k1, b)
    return total


def score_all(question: Sequence[str], index: InvertedIndex, k1: float = 1.2, b: float = 0.75) -> dict:
    """Term-at-a-time accumulation over posting lists, in query order."""
    scores = dict.fromkeys(index.doc_len, 0.0)
    for tok in question:
        plist = index.postings.get(tok)
        if not plist:
            continue
        idf = index.idf(tok)
        for aid, tf in plist:
            scores[aid] += _term_score(idf, tf, index.doc_len[aid], index.avgdl, k1, b)
    return scores


def rank(question: Sequence[str], index: InvertedIndex, top_k: int | None = None,
         k1: float = 1.2, b: float = 0.75) -> list[tuple[str, float]]:
    """Answer ids with scores, by descending score then ascending id."""
    if top_k is not None and top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    scores = score_all(question, index, k1, b)
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ordered if top_k is None else ordered[:top_k]
