"""Glue between the labeler and the retriever: question pools and label assignment."""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from .data import (DataError, EmbeddingTable, LabelClass, LabeledPool, QaPair, Vocab, question_vectors,
                   sample_episode)
from .ntm import NtmModel, predict_labels

log = logging.getLogger(__name__)


def labeled_question_pool(pairs: Sequence[QaPair], vocab: Vocab, table: EmbeddingTable) -> LabeledPool:
    """Pool of pooled question vectors for every pair that carries a gold label."""
    labeled = [p for p in pairs if p.label is not None]
    if not labeled:
        raise DataError("no labeled questions to build a labeler pool from")
    return LabeledPool(question_vectors(labeled, vocab, table), np.array([int(p.label) for p in labeled]))


def support_prefix(pool: LabeledPool, shots: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """A shuffled ``shots``-per-class support set, shrunk to what the smallest class allows."""
    available = int(pool.class_counts().min())
    if available == 0:
        missing = [c.label for c in LabelClass if pool.class_counts()[c] == 0]
        raise DataError(f"labeled pool has no examples of class(es) {missing}")
    if available < shots:
        log.warning("support prefix reduced to %d shots per class", available)
    ep = sample_episode(pool, min(shots, available), 0, rng)
    return ep.support_x, ep.support_y


def ntm_labels(model: NtmModel, pairs: Sequence[QaPair], vocab: Vocab, table: EmbeddingTable,
               pool: Optional[LabeledPool], shots: int, rng: np.random.Generator,
               chunk: int = 64) -> dict:
    """qid -> predicted LabelClass; the support prefix is drawn once and shared by all questions.

    ``pool=None`` labels from the trained weights alone.
    """
    if model.config.input_dim != table.dim:
        raise ValueError(f"labeler expects {model.config.input_dim}-dim vectors, embeddings are {table.dim}-dim")
    sx = sy = None
    if pool is not None:
        sx, sy = support_prefix(pool, shots, rng)
    out = {}
    for lo in range(0, len(pairs), chunk):
        block = list(pairs[lo:lo + chunk])
        preds = predict_labels(model, question_vectors(block, vocab, table), sx, sy)
        out.update({p.qid: lab for p, lab in zip(block, preds)})
    return out


def gold_labels(pairs: Sequence[QaPair]) -> dict:
    missing = [p.qid for p in pairs if p.label is None]
    if missing:
        raise DataError(f"oracle labels requested but {len(missing)} question(s) lack one, e.g. {missing[0]!r}")
    return {p.qid: p.label for p in pairs}


def label_agreement(predicted: dict, pairs: Sequence[QaPair]) -> Optional[float]:
    gold = [(predicted[p.qid], p.label) for p in pairs if p.label is not None and p.qid in predicted]
    if not gold:
        return None
    return float(np.mean([a == b for a, b in gold]))

