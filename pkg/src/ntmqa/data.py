"""Corpus ingestion: answers, QA pairs, labels, embeddings, episodes.

File formats (all UTF-8):

* ``answers.jsonl``  one ``{"id", "text"}`` record per line
* ``qa_train.jsonl`` / ``qa_test.jsonl``  ``{"qid", "question", "answer_id", "label"?}``
* embeddings  plain text, header ``"V d"`` then ``token v1 ... vd`` rows

Text is pre-tokenized and whitespace separated.
"""
from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class LabelClass(enum.IntEnum):
    BACKGROUND = 0
    CAUSE = 1
    CLAIM = 2
    FACT = 3
    INFLUENCE = 4

    @classmethod
    def parse(cls, name: str) -> "LabelClass":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise DataError(f"unknown label {name!r}; expected one of {label_names()}") from None

    def one_hot(self) -> np.ndarray:
        v = np.zeros(len(LabelClass))
        v[int(self)] = 1.0
        return v

    @property
    def label(self) -> str:
        return self.name.lower()


NUM_CLASSES = len(LabelClass)


def label_names() -> list[str]:
    return [c.label for c in LabelClass]


# ---------------------------------------------------------------------------
# vocabulary and embeddings
# ---------------------------------------------------------------------------

class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.stoi[token] = idx
            self.itos.append(token)
        return idx

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] < 1:
            raise DataError(f"embedding matrix must be (V, d>0), got {self.matrix.shape}")
        self.matrix[PAD] = 0.0

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def load_embeddings(path, vocab_policy: str = "fixed", corpus_tokens: Iterable[str] = (),
                    rng: Optional[np.random.Generator] = None) -> tuple[Vocab, EmbeddingTable]:
    """Read a text embedding file.

    Corpus tokens missing from the file map to ``<unk>`` under ``"fixed"``;
    under ``"extend"`` they get fresh rows drawn from U[-0.1, 0.1].
    """
    if vocab_policy not in ("fixed", "extend"):
        raise ValueError(f"vocab_policy must be 'fixed' or 'extend', got {vocab_policy!r}")
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: expected header 'V d'")
        try:
            _, dim = int(header[0]), int(header[1])
        except ValueError:
            raise DataError(f"{path}:1: expected header 'V d'") from None
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) - 1 != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, found {len(parts) - 1}")
            token = parts[0]
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            if token in vectors:
                warnings.warn(f"{path}:{lineno}: duplicate token {token!r}, keeping the last occurrence")
            vectors[token] = vec
    vocab = Vocab(vectors)
    rows = [np.zeros(dim), np.zeros(dim)] + list(vectors.values())
    if vocab_policy == "extend":
        rng = rng or np.random.default_rng(0)
        for tok in corpus_tokens:
            if tok not in vocab:
                vocab.add(tok)
                rows.append(rng.uniform(-0.1, 0.1, size=dim))
    return vocab, EmbeddingTable(np.stack(rows))


def random_embeddings(tokens: Iterable[str], dim: int, rng: np.random.Generator,
                      scale: float = 0.1) -> tuple[Vocab, EmbeddingTable]:
    vocab = Vocab(sorted(set(tokens)))
    matrix = rng.uniform(-scale, scale, size=(len(vocab), dim))
    return vocab, EmbeddingTable(matrix)


def save_embeddings(path, vocab_tokens: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(vocab_tokens)} {matrix.shape[1]}\n")
        for tok, row in zip(vocab_tokens, matrix):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")


def encode_sequence(tokens: Sequence[str], vocab: Vocab, n_max: int) -> np.ndarray:
    """Map tokens to indices, keep the first ``n_max``, right-pad with PAD."""
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    if not tokens:
        warnings.warn("encoding an empty token list; result is all padding")
    out = np.full(n_max, PAD, dtype=np.int64)
    ids = [vocab.index(t) for t in tokens[:n_max]]
    out[:len(ids)] = ids
    return out


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------

@dataclass
class AnswerSet:
    texts: dict = field(default_factory=dict)   # id -> token list, insertion ordered

    @property
    def ids(self) -> list[str]:
        return list(self.texts)

    def __len__(self) -> int:
        return len(self.texts)

    def __getitem__(self, answer_id: str) -> list[str]:
        return self.texts[answer_id]

    def __contains__(self, answer_id: str) -> bool:
        return answer_id in self.texts


@dataclass
class QaPair:
    qid: str
    question: list
    answer_id: str
    label: Optional[LabelClass] = None


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: record is not an object")
            yield lineno, record


def _field(path, lineno, record, name) -> str:
    value = record.get(name)
    if not isinstance(value, str):
        raise DataError(f"{path}:{lineno}: missing or non-string field {name!r}")
    return value


def load_answers(path) -> AnswerSet:
    answers = AnswerSet()
    for lineno, record in _read_jsonl(path):
        aid = _field(path, lineno, record, "id")
        tokens = _field(path, lineno, record, "text").split()
        if aid in answers:
            raise DataError(f"{path}:{lineno}: duplicate answer id {aid!r}")
        if not tokens:
            raise DataError(f"{path}:{lineno}: answer {aid!r} has no tokens")
        answers.texts[aid] = tokens
    return answers


def load_qa(path, answers: AnswerSet) -> list[QaPair]:
    pairs: list[QaPair] = []
    seen: set[str] = set()
    for lineno, record in _read_jsonl(path):
        qid = _field(path, lineno, record, "qid")
        question = _field(path, lineno, record, "question").split()
        aid = _field(path, lineno, record, "answer_id")
        if qid in seen:
            raise DataError(f"{path}:{lineno}: duplicate qid {qid!r}")
        if aid not in answers:
            raise DataError(f"{path}:{lineno}: answer id {aid!r} not in the answer set")
        label = record.get("label")
        if label is not None:
            if not isinstance(label, str):
                raise DataError(f"{path}:{lineno}: label must be a string")
            try:
                label = LabelClass.parse(label)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
        seen.add(qid)
        pairs.append(QaPair(qid, question, aid, label))
    return pairs


@dataclass
class Corpus:
    answers: AnswerSet
    train: list
    test: list

    def tokens(self) -> list[str]:
        seen: dict[str, None] = {}
        for toks in self.answers.texts.values():
            seen.update(dict.fromkeys(toks))
        for pair in self.train + self.test:
            seen.update(dict.fromkeys(pair.question))
        return list(seen)

    def test_answer_ids(self) -> list[str]:
        wanted = {p.answer_id for p in self.test}
        return [a for a in self.answers.ids if a in wanted]


def load_corpus(directory) -> Corpus:
    directory = Path(directory)
    answers = load_answers(directory / "answers.jsonl")
    train = load_qa(directory / "qa_train.jsonl", answers)
    test = load_qa(directory / "qa_test.jsonl", answers)
    return Corpus(answers, train, test)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def negative_sample(pair: QaPair, answers: AnswerSet, count: int, rng: np.random.Generator) -> list[str]:
    """``count`` distinct non-gold answer ids, uniformly without replacement."""
    if count >= len(answers):
        raise ValueError(f"cannot draw {count} negatives from {len(answers)} answers")
    others = [a for a in answers.ids if a != pair.answer_id]
    picks = rng.choice(len(others), size=count, replace=False)
    return [others[i] for i in picks]


@dataclass
class LabeledPool:
    """Question vectors with class labels (the labeler's training or test pool)."""
    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2 or len(self.vectors) != len(self.labels):
            raise DataError("pool vectors and labels are misaligned")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)


@dataclass
class Episode:
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray

    @property
    def shots(self) -> int:
        return len(self.support_y) // NUM_CLASSES


def sample_episode(pool: LabeledPool, shots: int, queries_per_class: int,
                   rng: np.random.Generator) -> Episode:
    """Draw ``shots`` support and ``queries_per_class`` disjoint query items per class."""
    need = shots + queries_per_class
    counts = pool.class_counts()
    for cls in LabelClass:
        if counts[cls] < need:
            raise DataError(f"class {cls.label!r} has {counts[cls]} items, episode needs {need}")
    support, query = [], []
    for cls in LabelClass:
        members = np.flatnonzero(pool.labels == cls)
        picks = rng.choice(members, size=need, replace=False)
        support.extend(picks[:shots])
        query.extend(picks[shots:])
    support = np.array(support, dtype=np.int64)[rng.permutation(len(support))]
    query = np.array(query, dtype=np.int64)[rng.permutation(len(query))]
    return Episode(pool.vectors[support], pool.labels[support], pool.vectors[query], pool.labels[query])


def load_pool(path) -> LabeledPool:
    """Read ``{"vector": [...], "label": name}`` records."""
    vectors, labels = [], []
    for lineno, record in _read_jsonl(path):
        vec = record.get("vector")
        if not isinstance(vec, list) or not vec:
            raise DataError(f"{path}:{lineno}: missing vector")
        label = record.get("label")
        if not isinstance(label, str):
            raise DataError(f"{path}:{lineno}: missing label")
        try:
            labels.append(int(LabelClass.parse(label)))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if vectors and len(vec) != len(vectors[0]):
            raise DataError(f"{path}:{lineno}: vector length {len(vec)} differs from {len(vectors[0])}")
        vectors.append(vec)
    if not vectors:
        raise DataError(f"{path}: empty pool")
    return LabeledPool(np.array(vectors, dtype=np.float64), np.array(labels))


def question_vectors(pairs: Sequence[QaPair], vocab: Vocab, table: EmbeddingTable) -> np.ndarray:
    """One-max-pool each question's word embeddings into a d-vector."""
    out = np.zeros((len(pairs), table.dim))
    for i, pair in enumerate(pairs):
        ids = [vocab.index(t) for t in pair.question] or [PAD]
        out[i] = table.matrix[ids].max(axis=0)
    return out
