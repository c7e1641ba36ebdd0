"""Retrieval P/R/F1, labeling accuracy, shot curves and gate heatmaps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import NUM_CLASSES, LabelClass

PROTOCOL = "macro-averaged top-k, single gold answer; F1 from averaged P and R"


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass
class RetrievalReport:
    precision: float   # percentages
    recall: float
    f1: float
    k: int
    questions: int
    per_class: dict = field(default_factory=dict)   # class name -> {proportion, precision, recall, f1, questions}
    protocol: str = PROTOCOL

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self) -> str:
        lines = [f"protocol: {self.protocol} (k={self.k}, questions={self.questions})",
                 f"{'':<12}{'P':>8}{'R':>8}{'F1':>8}",
                 f"{'overall':<12}{self.precision:8.1f}{self.recall:8.1f}{self.f1:8.1f}"]
        for name, row in self.per_class.items():
            lines.append(f"{name:<12}{row['precision']:8.1f}{row['recall']:8.1f}{row['f1']:8.1f}"
                         f"   ({row['proportion']:.1f}% of questions)")
        return "\n".join(lines)


def _prf(hits: np.ndarray, k: int) -> tuple[float, float, float]:
    if len(hits) == 0:
        return 0.0, 0.0, 0.0
    p = float(np.mean(hits / k))
    r = float(np.mean(hits))
    return 100 * p, 100 * r, 100 * f1_score(p, r)


def retrieval_metrics(rankings: Mapping[str, Sequence[str]], gold: Mapping[str, str], k: int = 3,
                      labels: Optional[Mapping[str, LabelClass]] = None) -> RetrievalReport:
    if k < 1:
        raise ValueError(f"cutoff k must be >= 1, got {k}")
    qids = list(rankings)
    missing = [q for q in qids if q not in gold]
    if missing:
        raise KeyError(f"no gold answer for question(s) {missing[:5]}")
    hits = np.array([1.0 if gold[q] in list(rankings[q])[:k] else 0.0 for q in qids])
    p, r, f = _prf(hits, k)
    report = RetrievalReport(p, r, f, k, len(qids))
    if labels:
        for cls in LabelClass:
            mask = np.array([labels.get(q) == cls for q in qids], dtype=bool)
            cp, cr, cf = _prf(hits[mask], k)
            report.per_class[cls.label] = {"proportion": 100 * mask.mean() if len(qids) else 0.0,
                                           "precision": cp, "recall": cr, "f1": cf,
                                           "questions": int(mask.sum())}
    return report


@dataclass
class LabelingReport:
    accuracy: float   # percentage
    shots: Optional[int]
    confusion: list   # rows gold, columns predicted

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def labeling_accuracy(predictions: Sequence[int], gold: Sequence[int], shots: Optional[int] = None) -> LabelingReport:
    if len(predictions) != len(gold):
        raise ValueError(f"{len(predictions)} predictions for {len(gold)} gold labels")
    conf = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for p, g in zip(predictions, gold):
        conf[int(g), int(p)] += 1
    total = conf.sum()
    acc = 100.0 * np.trace(conf) / total if total else 0.0
    return LabelingReport(float(acc), shots, conf.tolist())


def shot_curve(train_and_score, shots_list: Sequence[int] = (1, 2, 5, 10)) -> list[dict]:
    """Run ``train_and_score(shots) -> accuracy`` for each shot count."""
    return [{"shots": int(s), "accuracy": float(train_and_score(s))} for s in shots_list]


@dataclass
class HeatmapRecord:
    side: str
    tokens: list
    weights: list

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def export_gate_heatmap(activations: Sequence[np.ndarray], tokens: Sequence[str], side: str,
                        widths: Sequence[int]) -> HeatmapRecord:
    """Per-token salience from gated-flow outputs.

    ``activations[j]`` is the (h, T + l_j - 1) gated output of filter bank j.
    A token's weight is the mean L2 norm of the output columns whose window
    covers it, averaged over banks and scaled so the largest weight is 1.
    Tokens beyond the real (non-padding) length are dropped.
    """
    if side not in ("question", "answer"):
        raise ValueError(f"side must be 'question' or 'answer', got {side!r}")
    n = len(tokens)
    if n == 0:
        return HeatmapRecord(side, [], [])
    weights = np.zeros(n)
    for act, width in zip(activations, widths):
        norms = np.sqrt((np.asarray(act) ** 2).sum(axis=0))
        # output position p covers input positions p-width+1 .. p
        weights += np.array([norms[i:i + width].mean() for i in range(n)])
    weights /= len(widths)
    top = weights.max()
    if top > 0:
        weights = weights / top
    return HeatmapRecord(side, list(tokens), [float(w) for w in weights])
