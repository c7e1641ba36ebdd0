"""Cooperative gated convolutional encoder and max-margin answer ranking.

Pipeline for one token sequence::

    embedding lookup -> (+ label one-hot rows) -> dropout
      -> per filter width: wide conv (tanh) -> gated flow -> one-max-pool
      -> concatenate over widths

The gated flow runs left to right over the conv positions of one filter bank:
gates are sigmoids of the current column, and the inner cell follows
``cell[t] = cell[t-1] * g_i[t] + g_f[t] * (c[t] + w_n)`` with output
``tanh(cell[t]) * g_o[t]``.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import NUM_CLASSES, PAD, AnswerSet, EmbeddingTable, LabelClass, QaPair, Vocab, encode_sequence, negative_sample
from .optim import AdaGrad
from .tensor import Tensor

log = logging.getLogger(__name__)

ABLATIONS = ("full", "single_gate", "gates_off")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class CgnnConfig:
    widths: list = field(default_factory=lambda: [4])
    channels: int = 200
    embed_dim: int = 200
    n_max: int = 100
    margin: float = 0.1
    label_dims: int = 0
    dropout: float = 0.2
    ablation: str = "full"
    negatives: int = 20
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 30
    batch_size: int = 8
    freeze_embeddings: bool = False
    literal_hinge: bool = False

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if not self.widths or min(self.widths) < 1:
            raise ValueError(f"filter widths must be >= 1, got {self.widths}")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        if self.label_dims not in (0, NUM_CLASSES):
            raise ValueError(f"label_dims must be 0 or {NUM_CLASSES}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")

    @property
    def rep_dim(self) -> int:
        return self.channels * len(self.widths)


@dataclass
class EncoderOutput:
    rep: Tensor                 # (B, channels * len(widths))
    activations: list           # per width, (B, channels, T + l - 1) gated outputs
    gates: list                 # per width, dict of gate tensors (B, T', channels); empty when gates are off


class CgnnModel:
    def __init__(self, config: CgnnConfig, vocab: Vocab, embeddings: EmbeddingTable,
                 rng: Optional[np.random.Generator] = None):
        if embeddings.matrix.shape[0] != len(vocab):
            raise ValueError(f"embedding rows {embeddings.matrix.shape[0]} != vocab size {len(vocab)}")
        if embeddings.dim != config.embed_dim:
            raise ValueError(f"embedding dim {embeddings.dim} != config embed_dim {config.embed_dim}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.vocab = vocab
        h, d_in = config.channels, config.embed_dim + config.label_dims
        self.embedding = T.parameter(embeddings.matrix.copy(), "embedding")
        self.filters, self.filter_bias = [], []
        for w in config.widths:
            scale = 1.0 / math.sqrt(d_in * w)
            self.filters.append(T.parameter(rng.uniform(-scale, scale, size=(h, d_in, w)), f"filter{w}"))
            self.filter_bias.append(T.parameter(np.zeros(h), f"filter{w}_bias"))
        gscale = 1.0 / math.sqrt(h)
        self.gate_w = {g: T.parameter(rng.uniform(-gscale, gscale, size=(h, h)), f"gate_{g}") for g in "ifo"}
        self.gate_b = {g: T.parameter(np.zeros(h), f"gate_{g}_bias") for g in "ifo"}
        self.cell_bias = T.parameter(np.zeros(h), "cell_bias")
        self.version = 0
        self._answer_cache: dict = {}

    # -- parameters ------------------------------------------------------
    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict(embedding=self.embedding)
        for f, b in zip(self.filters, self.filter_bias):
            out[f.name] = f
            out[b.name] = b
        for g in "ifo":
            out[f"gate_{g}"] = self.gate_w[g]
            out[f"gate_{g}_bias"] = self.gate_b[g]
        out["cell_bias"] = self.cell_bias
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def trainable(self) -> list[Tensor]:
        params = self.parameters()
        return params[1:] if self.config.freeze_embeddings else params

    def bump_version(self) -> None:
        self.version += 1
        self._answer_cache.clear()

    # -- encoding ----------------------------------------------------------
    def attach_label(self, x: Tensor, indices: np.ndarray, labels: Optional[Sequence[Optional[LabelClass]]]) -> Tensor:
        """Append label rows to (B, d, n) inputs: one-hot on real tokens, zeros otherwise."""
        if self.config.label_dims == 0:
            if labels is not None and any(lab is not None for lab in labels):
                raise ValueError("labels given but the model was built with label_dims=0")
            return x
        batch, _, n = x.shape
        rows = np.zeros((batch, NUM_CLASSES, n))
        if labels is not None:
            for b, lab in enumerate(labels):
                if lab is not None:
                    rows[b, int(lab), :] = (indices[b] != PAD)
        return T.concat([x, T.constant(rows)], axis=1)

    def gated_flow(self, c: Tensor) -> tuple[Tensor, dict]:
        """(B, h, T') conv features -> (B, h, T') gated outputs and the gate values."""
        ablation = self.config.ablation
        if ablation == "gates_off":
            return c, {}
        batch, h, steps = c.shape
        cols = T.transpose(c, (0, 2, 1))                     # (B, T', h)
        rows = T.reshape(cols, (batch * steps, h))

        def gate(name):
            z = T.add_bias(T.matmul(rows, T.transpose(self.gate_w[name])), self.gate_b[name])
            return T.reshape(T.sigmoid(z), (batch, steps, h))

        g_f = gate("f")
        g_i = T.one_minus(g_f) if ablation == "single_gate" else gate("i")
        drive = T.mul(g_f, T.add_bias(cols, self.cell_bias))
        cell = T.linear_scan(g_i, drive)
        out = T.tanh(cell)
        gates = {"input": g_i, "forget": g_f}
        if ablation == "full":
            g_o = gate("o")
            out = T.mul(out, g_o)
            gates["output"] = g_o
        return T.transpose(out, (0, 2, 1)), gates

    def encode(self, indices, labels: Optional[Sequence[Optional[LabelClass]]] = None,
               training: bool = False, rng: Optional[np.random.Generator] = None) -> EncoderOutput:
        idx = np.atleast_2d(np.asarray(indices, dtype=np.int64))
        if idx.shape[1] != self.config.n_max:
            raise T.ShapeError(f"sequences must have length n_max={self.config.n_max}, got {idx.shape[1]}")
        x = T.transpose(T.embedding_lookup(self.embedding, idx), (0, 2, 1))   # (B, d, n)
        x = self.attach_label(x, idx, labels)
        x = T.dropout(x, self.config.dropout, training, rng)
        reps, acts, gates = [], [], []
        for f, b in zip(self.filters, self.filter_bias):
            c = T.conv1d_wide(x, f, b)
            hcols, g = self.gated_flow(c)
            acts.append(hcols)
            gates.append(g)
            reps.append(T.one_max_pool(hcols, axis=-1))
        return EncoderOutput(T.concat(reps, axis=1), acts, gates)

    def encode_tokens(self, token_lists: Sequence[Sequence[str]], labels=None, training=False, rng=None) -> EncoderOutput:
        idx = np.stack([encode_sequence(toks, self.vocab, self.config.n_max) for toks in token_lists])
        return self.encode(idx, labels, training, rng)

    def answer_reps(self, answers: AnswerSet, ids: Optional[Sequence[str]] = None, chunk: int = 256) -> tuple[list, np.ndarray]:
        """Representations of the given answers, cached per parameter version."""
        ids = list(ids) if ids is not None else answers.ids
        key = (self.version, tuple(ids))
        if key not in self._answer_cache:
            blocks = [self.encode_tokens([answers[a] for a in ids[i:i + chunk]]).rep.data
                      for i in range(0, len(ids), chunk)]
            self._answer_cache = {key: np.concatenate(blocks) if blocks else np.zeros((0, self.config.rep_dim))}
        return ids, self._answer_cache[key]

    # -- persistence ---------------------------------------------------------
    def save(self, path) -> None:
        config = asdict(self.config)
        config["vocab"] = list(self.vocab.itos)
        save_checkpoint(path, "cgnn", config, {k: v.data for k, v in self.named_parameters().items()})

    @classmethod
    def load(cls, path) -> "CgnnModel":
        _, config, params = load_checkpoint(path, expect_kind="cgnn")
        tokens = config.pop("vocab")
        vocab = Vocab(tokens[2:])
        model = cls(CgnnConfig(**config), vocab, EmbeddingTable(params["embedding"]))
        for name, t in model.named_parameters().items():
            t.data = params[name].copy()
        return model


# ---------------------------------------------------------------------------
# scoring and losses
# ---------------------------------------------------------------------------

def score_pair(q_rep, a_rep) -> float:
    """Cosine similarity; a zero vector on either side scores 0."""
    q, a = np.asarray(q_rep, dtype=float), np.asarray(a_rep, dtype=float)
    if q.shape != a.shape:
        raise ValueError(f"dimension mismatch {q.shape} vs {a.shape}")
    nq, na = np.linalg.norm(q), np.linalg.norm(a)
    if nq == 0 or na == 0:
        return 0.0
    return float(q @ a / (nq * na))


def hinge_loss(pos: float, negs: Sequence[float], margin: float) -> float:
    """sum over negatives of max(0, margin + neg - pos)."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    if len(negs) == 0:
        warnings.warn("hinge loss with no negatives is 0")
        return 0.0
    return float(sum(max(0.0, margin + n - pos) for n in negs))


def batch_hinge_loss(pos: Tensor, negs: Tensor, margin: float, literal: bool = False) -> Tensor:
    """Mean over the batch of per-question ranking losses.

    pos is (B,), negs is (B, K). The default is the standard ranking hinge;
    ``literal`` instead takes max over negatives of ``pos - neg + margin``.
    """
    batch, k = negs.shape
    pos_rep = T.repeat(pos, k)
    flat = T.reshape(negs, (batch * k,))
    if literal:
        diffs = T.add_scalar(T.sub(pos_rep, flat), margin)
        per_q = T.one_max_pool(T.reshape(diffs, (batch, k)), axis=1)
        return T.scale(T.sum(per_q), 1.0 / batch)
    viol = T.relu(T.add_scalar(T.sub(flat, pos_rep), margin))
    return T.scale(T.sum(viol), 1.0 / batch)


def pair_losses(model: CgnnModel, questions: Sequence[Sequence[str]], labels, positives: Sequence[Sequence[str]],
                negatives: Sequence[Sequence[Sequence[str]]], training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
    """Batch loss for questions against their gold answer and sampled negatives."""
    batch, k = len(questions), len(negatives[0])
    q = model.encode_tokens(questions, labels, training, rng).rep
    texts = []
    for p, ns in zip(positives, negatives):
        texts.append(p)
        texts.extend(ns)
    a = model.encode_tokens(texts, None, training, rng).rep
    a = T.reshape(a, (batch, k + 1, model.config.rep_dim))
    pos = T.cosine_rows(q, T.getitem(a, (slice(None), 0)))
    neg_reps = T.reshape(T.getitem(a, (slice(None), slice(1, None))), (batch * k, model.config.rep_dim))
    negs = T.reshape(T.cosine_rows(T.repeat(q, k), neg_reps), (batch, k))
    return batch_hinge_loss(pos, negs, model.config.margin, model.config.literal_hinge)


def train_retriever(model: CgnnModel, train: Sequence[QaPair], answers: AnswerSet, rng: np.random.Generator,
                    labels: Optional[Mapping[str, LabelClass]] = None, epochs: Optional[int] = None,
                    on_epoch: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Max-margin training; returns the per-epoch loss trace."""
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    if labels is not None and cfg.label_dims == 0:
        raise ValueError("labels supplied to a model built with label_dims=0")
    opt = AdaGrad(model.trainable(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    trace = []
    pairs = list(train)
    for epoch in range(1, epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(pairs))
        losses = []
        for lo in range(0, len(pairs), cfg.batch_size):
            batch = [pairs[i] for i in order[lo:lo + cfg.batch_size]]
            negs = [[answers[a] for a in negative_sample(p, answers, cfg.negatives, rng)] for p in batch]
            labs = [labels.get(p.qid) for p in batch] if labels is not None else None
            with T.Tape() as tape:
                loss = pair_losses(model, [p.question for p in batch], labs,
                                   [answers[p.answer_id] for p in batch], negs, training=True, rng=rng)
                tape.backward(loss)
            if model.embedding.grad is not None:
                model.embedding.grad[PAD] = 0.0
            opt.step()
            opt.zero_grad()
            losses.append(float(loss.data))
        model.bump_version()
        mean_loss = float(np.mean(losses)) if losses else 0.0
        if not math.isfinite(mean_loss):
            raise TrainingDiverged(f"loss became {mean_loss} in epoch {epoch}")
        record = {"epoch": epoch, "mean_loss": mean_loss, "wall_seconds": time.perf_counter() - start}
        trace.append(record)
        log.info("epoch %d mean loss %.5f", epoch, mean_loss)
        if on_epoch:
            on_epoch(record)
    return trace


def rank_answers(q_rep: np.ndarray, answer_ids: Sequence[str], answer_reps: np.ndarray) -> list[tuple[str, float]]:
    """Answer ids by descending cosine score, ties broken by id."""
    q = np.asarray(q_rep, dtype=float)
    nq = np.linalg.norm(q)
    norms = np.linalg.norm(answer_reps, axis=1)
    ok = (norms > 0) & (nq > 0)
    scores = np.where(ok, answer_reps @ q / np.where(ok, norms * nq, 1.0), 0.0)
    return sorted(zip(answer_ids, scores.tolist()), key=lambda kv: (-kv[1], kv[0]))


def rank_questions(model: CgnnModel, pairs: Sequence[QaPair], answers: AnswerSet,
                   labels: Optional[Mapping[str, LabelClass]] = None,
                   candidate_ids: Optional[Sequence[str]] = None, chunk: int = 256) -> dict:
    """qid -> ranked answer ids for every question."""
    ids, reps = model.answer_reps(answers, candidate_ids)
    out = {}
    for lo in range(0, len(pairs), chunk):
        block = pairs[lo:lo + chunk]
        labs = [labels.get(p.qid) for p in block] if labels is not None else None
        q = model.encode_tokens([p.question for p in block], labs).rep.data
        for p, qv in zip(block, q):
            out[p.qid] = [a for a, _ in rank_answers(qv, ids, reps)]
    return out
