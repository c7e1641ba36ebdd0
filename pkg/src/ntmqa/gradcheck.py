"""Central-difference gradient checking against the tape's analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor


class NondeterministicClosure(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    tolerance: float
    max_error: dict = field(default_factory=dict)   # param name -> max relative error
    checked: dict = field(default_factory=dict)     # param name -> coordinates checked

    @property
    def worst(self) -> float:
        return max(self.max_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def lines(self) -> list[str]:
        out = []
        for name, err in self.max_error.items():
            status = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{name:<24} coords={self.checked[name]:<5d} max_rel_err={err:.3e} {status}")
        return out


def finite_diff_check(closure: Callable[[], Tensor], params: Sequence[Tensor],
                      tolerance: float = 1e-4, step: float = 1e-4,
                      max_coords: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> GradCheckReport:
    """Compare analytic gradients of ``closure()`` with central differences.

    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    With ``max_coords`` set, at most that many coordinates per tensor are
    sampled (using ``rng``); otherwise every coordinate is checked.
    """
    first = float(closure().data)
    second = float(closure().data)
    if first != second:
        raise NondeterministicClosure(f"closure returned {first!r} then {second!r}")

    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = closure()
        tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(tolerance=tolerance)
    for i, (p, grad) in enumerate(zip(params, analytic)):
        name = p.name or f"param{i}"
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for c in coords:
            saved = flat[c]
            flat[c] = saved + step
            up = float(closure().data)
            flat[c] = saved - step
            down = float(closure().data)
            flat[c] = saved
            numeric = (up - down) / (2 * step)
            err = abs(grad.reshape(-1)[c] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
        report.max_error[name] = worst
        report.checked[name] = len(coords)
        p.grad = None
    return report
