"""Memory-augmented one-shot question-type labeler.

An LSTM controller drives ``heads`` read/write heads over an external memory
of ``slots x width`` cells. Reads are content addressed (softmax over cosine
similarities). Writes use least-recently-used access: each head blends its
previous read weights with a one-hot on a least-used slot, gated by a learned
scalar. All episode tensors carry a leading batch axis, so several episodes
run side by side.

Episodes are presented with offset labels: step t sees ``x_t`` concatenated
with the one-hot of ``y_{t-1}`` and must predict ``y_t``. Queries branch off the
state left after the support sequence, one query per branch, and see the last
support label.
"""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import NUM_CLASSES, Episode, LabelClass, LabeledPool, sample_episode
from .optim import AdaGrad
from .tensor import Tensor

log = logging.getLogger(__name__)

MEMORY_INIT = 1e-6


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class NtmConfig:
    input_dim: int = 200
    controller: int = 200
    heads: int = 4
    slots: int = 128
    width: int = 100
    gamma: float = 0.95
    lr: float = 1e-3
    batch_size: int = 16
    queries_per_class: int = 1
    erase_least_used: bool = True
    permute_labels: bool = True
    rotate_inputs: bool = False      # random orthogonal map of each training episode's vectors

    def __post_init__(self):
        if self.slots < self.heads:
            raise ValueError(f"need at least as many slots as heads ({self.slots} < {self.heads})")
        if self.width < 1 or self.heads < 1 or self.controller < 1:
            raise ValueError("width, heads and controller size must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"decay gamma must be in [0, 1), got {self.gamma}")


# ---------------------------------------------------------------------------
# memory primitives
# ---------------------------------------------------------------------------

def read_memory(weights: Tensor, memory: Tensor) -> Tensor:
    """(B, N) read weights times (B, N, M) memory -> (B, M)."""
    r, mem = weights.data, memory.data
    out = np.einsum("bn,bnm->bm", r, mem)

    def backward(g):
        return np.einsum("bm,bnm->bn", g, mem), r[:, :, None] * g[:, None, :]
    return T.record_op("read_memory", out, (weights, memory), backward)


def write_memory(memory: Tensor, w: Tensor, erase: Tensor, content: Tensor) -> Tensor:
    """Row n becomes ``M[n] * (1 - w[n] * erase) + w[n] * content`` (batched)."""
    mem, wd, ed, cd = memory.data, w.data, erase.data, content.data
    keep = 1.0 - wd[:, :, None] * ed[:, None, :]
    out = mem * keep + wd[:, :, None] * cd[:, None, :]

    def backward(g):
        gw = np.einsum("bnm,bm->bn", g, cd) - np.einsum("bnm,bnm,bm->bn", g, mem, ed)
        ge = -np.einsum("bnm,bnm,bn->bm", g, mem, wd)
        gc = np.einsum("bnm,bn->bm", g, wd)
        return g * keep, gw, ge, gc
    return T.record_op("write_memory", out, (memory, w, erase, content), backward)


def usage_update(u_prev: np.ndarray, reads: np.ndarray, writes: np.ndarray, gamma: float) -> np.ndarray:
    """u_t = gamma * u_{t-1} + r_t + w_t (reads/writes already summed over heads)."""
    return gamma * np.asarray(u_prev) + np.asarray(reads) + np.asarray(writes)


def least_used_mask(usage: np.ndarray, heads: int) -> np.ndarray:
    """One-hot rows (..., heads, N) on the ``heads`` smallest-usage slots, lowest index first on ties.

    Row j marks the j-th smallest slot; summing over heads gives the boolean v_t.
    """
    usage = np.asarray(usage)
    order = np.argsort(usage, axis=-1, kind="stable")[..., :heads]
    out = np.zeros(usage.shape[:-1] + (heads, usage.shape[-1]))
    np.put_along_axis(out, order[..., None], 1.0, axis=-1)
    return out


def write_weights(r_prev: Tensor, v_prev, gate: Tensor) -> Tensor:
    """sigma(g) * r_{t-1} + (1 - sigma(g)) * v_{t-1}, per batch row; ``gate`` holds raw g (B,)."""
    s = T.sigmoid(gate)
    return T.add(T.scale_rows(r_prev, s), T.scale_rows(T.constant(v_prev), T.one_minus(s)))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class MemoryState:
    memory: Tensor          # (B, N, M)
    usage: np.ndarray       # (B, N)
    reads: list             # per head, (B, N) Tensor
    least_used: np.ndarray  # (B, heads, N) one-hot rows
    h: Tensor               # (B, s)
    c: Tensor               # (B, s)

    def repeat(self, n: int) -> "MemoryState":
        return MemoryState(T.repeat(self.memory, n), np.repeat(self.usage, n, axis=0),
                           [T.repeat(r, n) for r in self.reads], np.repeat(self.least_used, n, axis=0),
                           T.repeat(self.h, n), T.repeat(self.c, n))


@dataclass
class StepTrace:
    logits: Tensor
    reads: list
    writes: list
    least_used: np.ndarray
    usage: np.ndarray


class NtmModel:
    def __init__(self, config: NtmConfig, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.trained_episodes = 0
        s, R, M = config.controller, config.heads, config.width
        n_in = config.input_dim + NUM_CLASSES

        def init(rows, cols, name):
            bound = 1.0 / math.sqrt(rows)
            return T.parameter(rng.uniform(-bound, bound, size=(rows, cols)), name)

        # controller gates packed as [input | forget | output | candidate]
        self.params = OrderedDict()
        self.params["ctrl_input"] = init(n_in, 4 * s, "ctrl_input")
        self.params["ctrl_hidden"] = init(s, 4 * s, "ctrl_hidden")
        self.params["ctrl_bias"] = T.parameter(np.zeros(4 * s), "ctrl_bias")
        for head in ("key", "erase", "content"):
            self.params[f"{head}_w"] = init(s, R * M, f"{head}_w")
            self.params[f"{head}_b"] = T.parameter(np.zeros(R * M), f"{head}_b")
        self.params["gate_w"] = init(s, R, "gate_w")
        self.params["gate_b"] = T.parameter(np.zeros(R), "gate_b")
        self.params["out_w"] = init(s + R * M, NUM_CLASSES, "out_w")
        self.params["out_b"] = T.parameter(np.zeros(NUM_CLASSES), "out_b")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def initial_state(self, batch: int) -> MemoryState:
        cfg = self.config
        usage = np.full((batch, cfg.slots), 1.0 / cfg.slots)
        reads = [T.constant(np.full((batch, cfg.slots), 1.0 / cfg.slots)) for _ in range(cfg.heads)]
        return MemoryState(T.constant(np.full((batch, cfg.slots, cfg.width), MEMORY_INIT)), usage, reads,
                           least_used_mask(usage, cfg.heads),
                           T.constant(np.zeros((batch, cfg.controller))), T.constant(np.zeros((batch, cfg.controller))))

    def controller_step(self, inputs: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        s = self.config.controller
        p = self.params
        z = T.add_bias(T.add(T.matmul(inputs, p["ctrl_input"]), T.matmul(h, p["ctrl_hidden"])), p["ctrl_bias"])
        i = T.sigmoid(T.getitem(z, (slice(None), slice(0, s))))
        f = T.sigmoid(T.getitem(z, (slice(None), slice(s, 2 * s))))
        o = T.sigmoid(T.getitem(z, (slice(None), slice(2 * s, 3 * s))))
        cand = T.tanh(T.getitem(z, (slice(None), slice(3 * s, 4 * s))))
        c_new = T.add(T.mul(f, c), T.mul(i, cand))
        return T.mul(T.tanh(c_new), o), c_new

    def step(self, inputs: Tensor, state: MemoryState) -> tuple[StepTrace, MemoryState]:
        cfg = self.config
        p = self.params
        R, M = cfg.heads, cfg.width
        h, c = self.controller_step(inputs, state.h, state.c)

        def project(name):
            return T.add_bias(T.matmul(h, p[f"{name}_w"]), p[f"{name}_b"])

        keys, erase, content = project("key"), T.sigmoid(project("erase")), T.tanh(project("content"))
        gates = project("gate")

        def head_slice(x, j, size):
            return T.getitem(x, (slice(None), slice(j * size, (j + 1) * size)))

        memory = state.memory
        writes = [write_weights(state.reads[j], state.least_used[:, j], T.reshape(head_slice(gates, j, 1), (-1,)))
                  for j in range(R)]
        if cfg.erase_least_used:
            favours_lu = gates.data < 0.0          # sigma(g) < 0.5
            keep = np.ones(memory.shape)
            for j in range(R):
                rows = favours_lu[:, j]
                keep[rows] *= (1.0 - state.least_used[rows, j])[:, :, None]
            if not np.all(keep == 1.0):
                memory = T.mul(memory, T.constant(keep))
        for j in range(R):
            memory = write_memory(memory, writes[j], head_slice(erase, j, M), head_slice(content, j, M))
        reads, read_vecs = [], []
        for j in range(R):
            r = T.softmax(T.cosine_against(head_slice(keys, j, M), memory))
            reads.append(r)
            read_vecs.append(read_memory(r, memory))
        usage = usage_update(state.usage, sum(r.data for r in reads), sum(w.data for w in writes), cfg.gamma)
        least_used = least_used_mask(usage, R)
        features = T.concat([h] + read_vecs, axis=1)
        logits = T.add_bias(T.matmul(features, p["out_w"]), p["out_b"])
        new_state = MemoryState(memory, usage, reads, least_used, h, c)
        return StepTrace(logits, reads, writes, least_used, usage), new_state

    # -- persistence -----------------------------------------------------------
    def save(self, path) -> None:
        config = asdict(self.config)
        config["trained_episodes"] = self.trained_episodes
        save_checkpoint(path, "ntm", config, {k: v.data for k, v in self.params.items()})

    @classmethod
    def load(cls, path) -> "NtmModel":
        _, config, params = load_checkpoint(path, expect_kind="ntm")
        trained = config.pop("trained_episodes", 0)
        model = cls(NtmConfig(**config))
        model.trained_episodes = trained
        for name, t in model.params.items():
            t.data = params[name].copy()
        return model


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

@dataclass
class EpisodeResult:
    loss: Tensor                 # mean NLL over every support step and query
    support_probs: np.ndarray    # (B, S, classes)
    query_probs: np.ndarray      # (B, Q, classes)
    traces: list                 # StepTrace per support step, then the query step


def _one_hot(labels: np.ndarray) -> np.ndarray:
    out = np.zeros(labels.shape + (NUM_CLASSES,))
    if labels.size:
        np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def check_composition(ep: Episode) -> None:
    counts = np.bincount(ep.support_y, minlength=NUM_CLASSES)
    if len(counts) != NUM_CLASSES or len(set(counts.tolist())) != 1 or counts[0] == 0:
        raise ValueError(f"episode support must hold equal counts per class, got {counts.tolist()}")


def _softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def episode_forward(episodes: Episode | Sequence[Episode], model: NtmModel, strict: bool = True) -> EpisodeResult:
    """Run a batch of equally shaped episodes; record on the active tape if any."""
    if isinstance(episodes, Episode):
        episodes = [episodes]
    if strict:
        for ep in episodes:
            check_composition(ep)
    sx = np.stack([ep.support_x for ep in episodes])
    sy = np.stack([ep.support_y for ep in episodes]).astype(np.int64)
    qx = np.stack([ep.query_x for ep in episodes]) if len(episodes[0].query_y) else None
    qy = np.stack([ep.query_y for ep in episodes]).astype(np.int64)
    batch, steps = sy.shape
    if sx.shape[-1] != model.config.input_dim:
        raise T.ShapeError(f"episode vectors have dim {sx.shape[-1]}, model expects {model.config.input_dim}")
    state = model.initial_state(batch)
    prev = np.zeros((batch, NUM_CLASSES))
    nll_terms, support_probs, traces = [], [], []
    for t in range(steps):
        trace, state = model.step(T.constant(np.concatenate([sx[:, t], prev], axis=1)), state)
        traces.append(trace)
        nll_terms.append(T.sum(T.nll(trace.logits, sy[:, t])))
        support_probs.append(_softmax_np(trace.logits.data))
        prev = _one_hot(sy[:, t])
    n_q = qy.shape[1]
    query_probs = np.zeros((batch, n_q, NUM_CLASSES))
    if qx is not None and n_q:
        branched = state.repeat(n_q)
        inputs = np.concatenate([qx.reshape(batch * n_q, -1), np.repeat(prev, n_q, axis=0)], axis=1)
        trace, _ = model.step(T.constant(inputs), branched)
        traces.append(trace)
        nll_terms.append(T.sum(T.nll(trace.logits, qy.reshape(-1))))
        query_probs = _softmax_np(trace.logits.data).reshape(batch, n_q, NUM_CLASSES)
    total = batch * (steps + n_q)
    loss = T.scale(T.sum(T.concat([T.reshape(t, (1,)) for t in nll_terms])), 1.0 / total)
    sp = np.stack(support_probs, axis=1) if support_probs else np.zeros((batch, 0, NUM_CLASSES))
    return EpisodeResult(loss, sp, query_probs, traces)


def heldout_episode(train_pool: LabeledPool, test_pool: LabeledPool, shots: int, queries_per_class: int,
                    rng: np.random.Generator) -> Episode:
    """Support drawn from the training pool, queries from the held-out pool."""
    support = sample_episode(train_pool, shots, 0, rng)
    queries = sample_episode(test_pool, 0, queries_per_class, rng)
    return Episode(support.support_x, support.support_y, queries.query_x, queries.query_y)


def _permuted(ep: Episode, perm: np.ndarray) -> Episode:
    return Episode(ep.support_x, perm[ep.support_y], ep.query_x, perm[ep.query_y])


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix."""
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def _rotated(ep: Episode, rot: np.ndarray) -> Episode:
    return Episode(ep.support_x @ rot, ep.support_y, ep.query_x @ rot, ep.query_y)


def evaluate_labeler(model: NtmModel, train_pool: LabeledPool, test_pool: LabeledPool, shots: int,
                     episodes: int, rng: np.random.Generator, queries_per_class: int = 5,
                     batch: int = 25) -> tuple[float, np.ndarray, np.ndarray]:
    """Held-out query accuracy with true class labels; returns (accuracy, predictions, gold)."""
    preds, gold = [], []
    done = 0
    while done < episodes:
        n = min(batch, episodes - done)
        eps = [heldout_episode(train_pool, test_pool, shots, queries_per_class, rng) for _ in range(n)]
        res = episode_forward(eps, model)
        preds.append(res.query_probs.argmax(axis=-1).reshape(-1))
        gold.append(np.stack([ep.query_y for ep in eps]).reshape(-1))
        done += n
    preds, gold = np.concatenate(preds), np.concatenate(gold)
    return float(np.mean(preds == gold)), preds, gold


def train_labeler(model: NtmModel, pool: LabeledPool, shots, episodes: int, rng: np.random.Generator,
                  test_pool: Optional[LabeledPool] = None, eval_every: int = 0, eval_episodes: int = 50,
                  on_record=None) -> list[dict]:
    """Episodic training with AdaGrad on mean NLL.

    ``shots`` is an int or a sequence of ints; with a sequence every batch draws
    its shot count uniformly from it, and curve records use the largest.
    Returns the accuracy curve: one ``{episode_index, shots, held_out_accuracy}``
    record every ``eval_every`` episodes (and at the end) when a test pool is given.
    """
    cfg = model.config
    choices = [int(shots)] if np.isscalar(shots) else [int(k) for k in shots]
    if not choices or min(choices) < 1:
        raise ValueError(f"shots must be positive, got {shots}")
    for k in choices:
        if k not in (1, 2, 5, 10):
            log.warning("shots=%d is outside the usual {1, 2, 5, 10}", k)
    eval_shots = max(choices)
    opt = AdaGrad(model.parameters(), lr=cfg.lr)
    curve: list[dict] = []
    eval_rng = np.random.default_rng(rng.integers(2**63))
    seen = 0
    next_eval = eval_every if eval_every else None
    while seen < episodes:
        n = min(cfg.batch_size, episodes - seen)
        k = choices[0] if len(choices) == 1 else choices[int(rng.integers(len(choices)))]
        eps = [sample_episode(pool, k, cfg.queries_per_class, rng) for _ in range(n)]
        if cfg.permute_labels:
            eps = [_permuted(ep, rng.permutation(NUM_CLASSES)) for ep in eps]
        if cfg.rotate_inputs:
            eps = [_rotated(ep, random_rotation(cfg.input_dim, rng)) for ep in eps]
        with T.Tape() as tape:
            res = episode_forward(eps, model)
            tape.backward(res.loss)
        loss = float(res.loss.data)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"labeler loss became {loss} after {seen} episodes")
        opt.step()
        opt.zero_grad()
        seen += n
        model.trained_episodes += n
        if test_pool is not None and next_eval is not None and (seen >= next_eval or seen >= episodes):
            acc, _, _ = evaluate_labeler(model, pool, test_pool, eval_shots, eval_episodes,
                                         np.random.default_rng(eval_rng.integers(2**63)))
            record = {"episode_index": seen, "shots": eval_shots, "held_out_accuracy": acc}
            curve.append(record)
            log.info("episodes %d loss %.4f held-out accuracy %.3f", seen, loss, acc)
            if on_record:
                on_record(record)
            while next_eval <= seen:
                next_eval += eval_every
    return curve


def predict_labels(model: NtmModel, questions: np.ndarray, support_x: Optional[np.ndarray] = None,
                   support_y: Optional[np.ndarray] = None) -> list[LabelClass]:
    """Label each question vector after presenting the support set as an episode prefix.

    Without a support set the query step starts from the initial memory state
    (weights-only mode).
    """
    questions = np.atleast_2d(np.asarray(questions, dtype=np.float64))
    if len(questions) == 0:
        return []
    if model.trained_episodes == 0:
        log.warning("labeling with an untrained NTM")
    if support_x is None:
        support_x = np.zeros((0, questions.shape[1]))
        support_y = np.zeros(0, dtype=np.int64)
    ep = Episode(np.asarray(support_x, dtype=np.float64), np.asarray(support_y, dtype=np.int64),
                 questions, np.zeros(len(questions), dtype=np.int64))
    res = episode_forward(ep, model, strict=False)
    return [LabelClass(int(i)) for i in res.query_probs[0].argmax(axis=-1)]
