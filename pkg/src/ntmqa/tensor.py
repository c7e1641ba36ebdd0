"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape`. Outside a
tape nothing is recorded, so evaluation-only forward passes are pure::

    with Tape() as tape:
        loss = ops.sum(ops.mul(w, w))
        tape.backward(loss)
    w.grad  # 2 * w

There is no broadcasting: binary elementwise ops require identical shapes and
every alignment (bias over an axis, per-row scaling, repetition) is its own op.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: Optional[int] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _bad_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other): return add(self, other)
    def __sub__(self, other): return sub(self, other)
    def __mul__(self, other): return mul(self, other)
    def __matmul__(self, other): return matmul(self, other)
    def __neg__(self): return scale(self, -1.0)
    def __getitem__(self, key): return getitem(self, key)


def _bad_item(t: Tensor) -> float:
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


class _Entry:
    __slots__ = ("kind", "inputs", "output", "backward")

    def __init__(self, kind, inputs, output, backward):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive applications for one forward/backward step."""

    def __init__(self):
        self.entries: list[_Entry] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor, backward: Callable) -> None:
        output.node_id = len(self.entries)
        self.entries.append(_Entry(kind, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every trainable leaf, then clear."""
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            in_grads = entry.backward(g)
            for t, gi in zip(entry.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.node_id is None:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                else:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
        self.clear()

    def clear(self) -> None:
        for entry in self.entries:
            entry.output.node_id = None
        self.entries = []


_TAPES: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def record_op(kind: str, out: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``out`` as a Tensor and, if any input is tracked, log it on the active tape.

    ``backward(g)`` must return one gradient (or None) per input, in order.
    Model modules use this to add fused primitives of their own.
    """
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor.__new__(Tensor)
    result.data = out
    result.grad = None
    result.requires_grad = tracked
    result.name = None
    result.node_id = None
    if tracked:
        tape.record(kind, inputs, result, backward)
    return result


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return record_op("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return record_op("scale", a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return record_op("add_scalar", a.data + c, (a,), lambda g: (g,))


def one_minus(a: Tensor) -> Tensor:
    return record_op("one_minus", 1.0 - a.data, (a,), lambda g: (-g,))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return record_op("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return record_op("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record_op("relu", a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record_op("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return record_op("log", np.log(x), (a,), lambda g: (g / x,))


# ---------------------------------------------------------------------------
# shape and reduction
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return record_op("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(x: Tensor, bias: Tensor, axis: int = -1) -> Tensor:
    """Add the vector ``bias`` along ``axis`` of ``x`` (explicit, not broadcasting)."""
    axis = axis % x.ndim
    if bias.ndim != 1 or bias.shape[0] != x.shape[axis]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not fit axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    others = tuple(i for i in range(x.ndim) if i != axis)
    return record_op("add_bias", x.data + bias.data.reshape(view), (x, bias),
                     lambda g: (g, g.sum(axis=others)))


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply slice ``x[i]`` by scalar ``s[i]``."""
    if s.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows: scales {s.shape} vs rows of {x.shape}")
    view = (-1,) + (1,) * (x.ndim - 1)
    sv = s.data.reshape(view)
    xd = x.data
    inner = tuple(range(1, x.ndim))
    return record_op("scale_rows", xd * sv, (x, s),
                     lambda g: (g * sv, (g * xd).sum(axis=inner)))


def repeat(x: Tensor, n: int) -> Tensor:
    """Repeat each leading-axis slice ``n`` times consecutively (row i → rows i*n..i*n+n-1)."""
    out = np.repeat(x.data, n, axis=0)
    shape = x.shape

    def backward(g):
        return (g.reshape((shape[0], n) + shape[1:]).sum(axis=1),)
    return record_op("repeat", out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return record_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return record_op("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, key) -> Tensor:
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=DTYPE)
        np.add.at(gx, key, g)
        return (gx,)
    return record_op("getitem", np.array(x.data[key]), (x,), backward)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    out = np.asarray(x.data.sum(axis=axis))

    def backward(g):
        if axis is None:
            return (np.full(shape, float(g), dtype=DTYPE),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)
    return record_op("sum", out, (x,), backward)


def mean(x: Tensor) -> Tensor:
    return scale(sum(x), 1.0 / x.size)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise ShapeError("concat of an empty list")
    if len(xs) == 1:
        return xs[0]
    ndim = xs[0].ndim
    axis = axis % ndim
    for t in xs[1:]:
        if t.ndim != ndim or any(t.shape[i] != xs[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat: side extents differ, {xs[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return record_op("concat", np.concatenate([t.data for t in xs], axis=axis), tuple(xs),
                     lambda g: tuple(np.split(g, cuts, axis=axis)))


# ---------------------------------------------------------------------------
# normalisation, pooling, losses
# ---------------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Normalised exponential over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return record_op("softmax", out, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)
    return record_op("log_softmax", out, (x,), backward)


def nll(logits: Tensor, targets) -> Tensor:
    """Per-row negative log-likelihood of integer ``targets`` under softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"nll: logits {logits.shape} vs targets {targets.shape}")
    rows = np.arange(targets.shape[0])
    return scale(getitem(log_softmax(logits), (rows, targets)), -1.0)


def one_max_pool(x: Tensor, axis: int = -1) -> Tensor:
    """Maximum over ``axis``; the gradient goes to the first maximal index."""
    axis = axis % x.ndim
    if x.shape[axis] < 1:
        raise ShapeError("one_max_pool over an empty axis")
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=DTYPE)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)
    return record_op("one_max_pool", out, (x,), backward)


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of two (n, k) tensors; a zero row scores 0."""
    _same_shape("cosine_rows", a, b)
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=-1))
    nb = np.sqrt((bd * bd).sum(axis=-1))
    dot = (ad * bd).sum(axis=-1)
    ok = (na > 0) & (nb > 0)
    denom = np.where(ok, na * nb, 1.0)
    out = np.where(ok, dot / denom, 0.0)

    def backward(g):
        gs = np.where(ok, g, 0.0)[..., None]
        inv = (1.0 / denom)[..., None]
        o = out[..., None]
        na_ = np.where(ok, na, 1.0)[..., None]
        nb_ = np.where(ok, nb, 1.0)[..., None]
        ga = gs * (bd * inv - o * ad / (na_ * na_))
        gb = gs * (ad * inv - o * bd / (nb_ * nb_))
        return ga, gb
    return record_op("cosine_rows", out, (a, b), backward)


def cosine_against(keys: Tensor, rows: Tensor) -> Tensor:
    """Cosine of each key (B, k) against every row of its matrix (B, N, k) → (B, N)."""
    if keys.ndim != 2 or rows.ndim != 3 or rows.shape[0] != keys.shape[0] or rows.shape[2] != keys.shape[1]:
        raise ShapeError(f"cosine_against: keys {keys.shape} vs rows {rows.shape}")
    k, m = keys.data, rows.data
    nk = np.sqrt((k * k).sum(axis=-1))[:, None]
    nm = np.sqrt((m * m).sum(axis=-1))
    dot = np.einsum("bk,bnk->bn", k, m)
    ok = (nk > 0) & (nm > 0)
    denom = np.where(ok, nk * nm, 1.0)
    out = np.where(ok, dot / denom, 0.0)

    def backward(g):
        gok = np.where(ok, g, 0.0)
        gs = gok / denom
        nk_ = np.where(nk > 0, nk, 1.0)
        nm_ = np.where(nm > 0, nm, 1.0)
        gk = np.einsum("bn,bnk->bk", gs, m) - (gok * out).sum(axis=1)[:, None] * k / (nk_ * nk_)
        gm = gs[:, :, None] * k[:, None, :] - (gok * out / (nm_ * nm_))[:, :, None] * m
        return gk, gm
    return record_op("cosine_against", out, (keys, rows), backward)


# ---------------------------------------------------------------------------
# sequence primitives
# ---------------------------------------------------------------------------

def conv1d_wide(seq: Tensor, filters: Tensor, bias: Tensor, activation: Optional[str] = "tanh") -> Tensor:
    """Wide 1-D convolution with ``l - 1`` zero padding on both ends.

    seq is (d_in, T) or (B, d_in, T); filters (h, d_in, l); bias (h,).
    Returns (h, T + l - 1) or (B, h, T + l - 1), passed through tanh unless
    ``activation`` is None.
    """
    if filters.ndim != 3:
        raise ShapeError(f"conv1d_wide: filters must be (h, d_in, l), got {filters.shape}")
    h, d_in, width = filters.shape
    if width < 1:
        raise ShapeError("conv1d_wide: filter width must be >= 1")
    single = seq.ndim == 2
    x = seq.data[None] if single else seq.data
    if x.ndim != 3 or x.shape[1] != d_in:
        raise ShapeError(f"conv1d_wide: input {seq.shape} does not match filters {filters.shape}")
    if bias.shape != (h,):
        raise ShapeError(f"conv1d_wide: bias {bias.shape} vs {h} channels")
    batch, _, steps = x.shape
    out_len = steps + width - 1
    xp = np.zeros((batch, d_in, steps + 2 * (width - 1)), dtype=DTYPE)
    xp[:, :, width - 1:width - 1 + steps] = x
    # windows: (B, T', d_in * l) in (channel, offset) order to match filters.reshape
    win = np.lib.stride_tricks.sliding_window_view(xp, width, axis=2)
    win = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(batch, out_len, d_in * width)
    w2 = filters.data.reshape(h, d_in * width)
    pre = win @ w2.T + bias.data
    act = np.tanh(pre) if activation == "tanh" else pre
    out = act.transpose(0, 2, 1)
    if single:
        out = out[0]

    def backward(g):
        gp = g[None] if single else g
        gp = gp.transpose(0, 2, 1)
        if activation == "tanh":
            gp = gp * (1.0 - act * act)
        gw = np.tensordot(gp, win, axes=([0, 1], [0, 1])).reshape(h, d_in, width)
        gb = gp.sum(axis=(0, 1))
        gwin = (gp @ w2).reshape(batch, out_len, d_in, width)
        gxp = np.zeros_like(xp)
        for k in range(width):
            gxp[:, :, k:k + out_len] += gwin[:, :, :, k].transpose(0, 2, 1)
        gx = gxp[:, :, width - 1:width - 1 + steps]
        return (gx[0] if single else gx), gw, gb
    return record_op("conv1d_wide", np.ascontiguousarray(out), (seq, filters, bias), backward)


def linear_scan(decay: Tensor, drive: Tensor) -> Tensor:
    """out[t] = out[t-1] * decay[t] + drive[t] along axis -2, with out[-1] = 0."""
    _same_shape("linear_scan", decay, drive)
    a, b = decay.data, drive.data
    steps = a.shape[-2]
    out = np.empty_like(b)
    prev = np.zeros(b.shape[:-2] + b.shape[-1:], dtype=DTYPE)
    for t in range(steps):
        prev = prev * a[..., t, :] + b[..., t, :]
        out[..., t, :] = prev

    def backward(g):
        ga = np.zeros_like(a)
        gb = np.empty_like(b)
        lam = np.zeros_like(prev)
        for t in range(steps - 1, -1, -1):
            lam = g[..., t, :] + (lam * a[..., t + 1, :] if t + 1 < steps else 0.0)
            gb[..., t, :] = lam
            if t > 0:
                ga[..., t, :] = lam * out[..., t - 1, :]
        return ga, gb
    return record_op("linear_scan", out, (decay, drive), backward)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of ``table`` (V, d) → indices.shape + (d,)."""
    idx = np.asarray(indices, dtype=np.int64)
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape, dtype=DTYPE)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)
    return record_op("embedding", table.data[idx], (table,), backward)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return record_op("dropout", x.data * mask, (x,), lambda g: (g * mask,))
