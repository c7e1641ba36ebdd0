"""Desk-scale synthetic datasets for the labeler and the retriever.

``fewshot``: five Gaussian clusters in ``dim`` dimensions, one per label class.

``retrieval``: answers grouped by topic, one answer per (topic, class). An
answer holds its topic's words, a few words typical of its class and some
unique detail words. A question keeps part of the topic words, each detail
word with probability ``1 - noise``, and one class-marker word that appears in
no answer; the marker's class is the question's label. With ``paraphrase`` the
question's topic and detail words are swapped for synonyms that never occur in
answers. An embedding file is written alongside, in which synonyms sit close to
their originals and markers cluster by class, much like pretrained vectors.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import NUM_CLASSES, LabelClass, save_embeddings


@dataclass
class FewshotConfig:
    dim: int = 16
    per_class_train: int = 40
    per_class_test: int = 40
    separation: float = 3.0
    noise: float = 1.0


@dataclass
class RetrievalConfig:
    n_topics: int = 12
    topic_words: int = 6
    class_words: int = 6
    class_words_per_answer: int = 3
    detail_words: int = 3
    markers_per_class: int = 3
    question_topic_words: int = 3
    noise: float = 0.0
    paraphrase: bool = False
    train_questions_per_answer: int = 1
    test_questions_per_answer: int = 1
    dim: int = 16
    synonym_jitter: float = 0.05


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def class_centers(config: FewshotConfig, rng: np.random.Generator) -> np.ndarray:
    if config.dim < NUM_CLASSES:
        raise ValueError(f"fewshot dim must be >= {NUM_CLASSES}, got {config.dim}")
    q, _ = np.linalg.qr(rng.normal(size=(config.dim, NUM_CLASSES)))
    return config.separation * q.T


def generate_fewshot(out_dir, config: FewshotConfig, rng: np.random.Generator) -> Path:
    if config.separation == 0 and config.noise == 0:
        warnings.warn("degenerate fewshot config: separation 0 and noise 0 make every point identical")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    centers = class_centers(config, rng)
    for split, per_class in (("train", config.per_class_train), ("test", config.per_class_test)):
        records = []
        for cls in LabelClass:
            pts = centers[cls] + config.noise * rng.normal(size=(per_class, config.dim))
            records.extend({"label": cls.label, "vector": [float(v) for v in p]} for p in pts)
        order = rng.permutation(len(records))
        _write_jsonl(out_dir / f"fewshot_{split}.jsonl", [records[i] for i in order])
    (out_dir / "meta.json").write_text(json.dumps({"task": "fewshot", **asdict(config)}, sort_keys=True) + "\n")
    return out_dir


def generate_retrieval(out_dir, config: RetrievalConfig, rng: np.random.Generator) -> Path:
    if config.noise == 1.0 and config.question_topic_words == 0:
        warnings.warn("questions keep no topic or detail words; retrieval is ill-posed")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    answers, pairs = [], {"train": [], "test": []}
    for topic in range(config.n_topics):
        topic_toks = [f"t{topic}w{i}" for i in range(config.topic_words)]
        for cls in LabelClass:
            aid = f"a{len(answers):04d}"
            class_toks = [f"c{int(cls)}w{i}" for i in
                          rng.choice(config.class_words, size=config.class_words_per_answer, replace=False)]
            detail = [f"{aid}d{i}" for i in range(config.detail_words)]
            toks = topic_toks + class_toks + detail
            toks = [toks[i] for i in rng.permutation(len(toks))]
            answers.append({"id": aid, "text": " ".join(toks)})
            for split, n in (("train", config.train_questions_per_answer),
                             ("test", config.test_questions_per_answer)):
                for _ in range(n):
                    picked = [topic_toks[i] for i in
                              np.sort(rng.choice(config.topic_words, size=config.question_topic_words, replace=False))]
                    kept = [d for d in detail if rng.random() >= config.noise]
                    content = picked + kept
                    if config.paraphrase:
                        content = ["s:" + t for t in content]
                    marker = f"m{int(cls)}q{rng.integers(config.markers_per_class)}"
                    qtoks = content + [marker]
                    qtoks = [qtoks[i] for i in rng.permutation(len(qtoks))]
                    qid = f"q{split[:2]}{len(pairs[split]):05d}"
                    pairs[split].append({"qid": qid, "question": " ".join(qtoks),
                                         "answer_id": aid, "label": cls.label})
    _write_jsonl(out_dir / "answers.jsonl", answers)
    for split, recs in pairs.items():
        _write_jsonl(out_dir / f"qa_{split}.jsonl", recs)
    tokens, matrix = _retrieval_embeddings(answers, pairs, config, rng)
    save_embeddings(out_dir / "embeddings.txt", tokens, matrix)
    (out_dir / "meta.json").write_text(json.dumps({"task": "retrieval", **asdict(config)}, sort_keys=True) + "\n")
    return out_dir


def _is_content(token: str) -> bool:
    # topic words "t<k>w<i>" and answer detail words "a<id>d<i>"
    return token.startswith("t") or (token.startswith("a") and "d" in token)


def _retrieval_embeddings(answers, pairs, config: RetrievalConfig, rng: np.random.Generator):
    seen: dict[str, None] = {}
    for rec in answers:
        seen.update(dict.fromkeys(rec["text"].split()))
    for recs in pairs.values():
        for rec in recs:
            seen.update(dict.fromkeys(rec["question"].split()))
    base = sorted(t for t in seen if not t.startswith("s:"))
    # synonyms of every content word, so paraphrased test questions never hit <unk>
    synonyms = sorted({"s:" + t for t in base if _is_content(t)})
    dim = config.dim
    prototypes = rng.normal(size=(NUM_CLASSES, dim))
    vecs = {}
    for tok in base:
        if tok.startswith("m"):
            cls = int(tok[1:tok.index("q")])
            vecs[tok] = 0.5 * prototypes[cls] + 0.1 * rng.normal(size=dim)
        else:
            vecs[tok] = rng.normal(size=dim) / np.sqrt(dim)
    for tok in synonyms:
        vecs[tok] = vecs[tok[2:]] + config.synonym_jitter * rng.normal(size=dim) / np.sqrt(dim)
    tokens = base + synonyms
    return tokens, np.stack([vecs[t] for t in tokens])


def generate_synthetic(task: str, out_dir, config=None, rng: np.random.Generator | None = None) -> Path:
    rng = rng if rng is not None else np.random.default_rng(0)
    if task == "fewshot":
        return generate_fewshot(out_dir, config or FewshotConfig(), rng)
    if task == "retrieval":
        return generate_retrieval(out_dir, config or RetrievalConfig(), rng)
    raise ValueError(f"unknown synthetic task {task!r}; expected 'fewshot' or 'retrieval'")
