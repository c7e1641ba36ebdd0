"""Diagonal AdaGrad with optional L2 weight decay."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def _is_weight(t: Tensor) -> bool:
    # biases (and the CGNN cell bias) are 1-D; everything else counts as a weight
    return t.ndim >= 2


class AdaGrad:
    """Per-coordinate AdaGrad.

    Each step adds ``weight_decay * theta`` to the gradient of decayed tensors,
    accumulates the squared gradient, and moves by
    ``lr * g / (sqrt(acc) + eps)``.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, eps: float = 1e-6,
                 weight_decay: float = 0.0, decay_filter: Optional[Callable[[Tensor], bool]] = None):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be nonnegative, got {weight_decay}")
        self.params = list(params)
        self.lr = lr
        self.eps = eps
        self.weight_decay = weight_decay
        decay_filter = decay_filter or _is_weight
        self.decayed = [decay_filter(p) for p in self.params]
        self.accumulators = [np.zeros_like(p.data) for p in self.params]
        self.steps = 0

    def step(self) -> None:
        for p, acc, decayed in zip(self.params, self.accumulators, self.decayed):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if decayed and self.weight_decay:
                g = g + self.weight_decay * p.data
            acc += g * g
            p.data -= self.lr * g / (np.sqrt(acc) + self.eps)
        self.steps += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_dict(self) -> dict:
        return {"accumulators": [a.copy() for a in self.accumulators], "steps": self.steps}
