"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from gamfq.nncore.autodiff import Tape, Tensor
from gamfq.nncore.params import ParamStore

LossFn = Callable[[Tape | None], Tensor]


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    label: str
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def format(self) -> str:
        lines = [f"[{'PASS' if self.passed else 'FAIL'}] {self.label} (tol {self.tolerance:g})"]
        for e in self.entries:
            lines.append(f"    {e.name:<40s} max rel err {e.max_rel_error:.3e}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``max|a - n| / max(max|a|, max|n|)``."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_grad(store: ParamStore, name: str, loss_fn: LossFn, eps: float = 1e-6) -> np.ndarray:
    p = store.params[name]
    g = np.zeros_like(p)
    flat = p.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        up = float(loss_fn(None).data)
        flat[k] = orig - eps
        down = float(loss_fn(None).data)
        flat[k] = orig
        gflat[k] = (up - down) / (2 * eps)
    return g


def grad_check(
    builder: Callable[[], tuple[list[ParamStore], LossFn]],
    tolerance: float,
    eps: float = 1e-6,
    label: str = "network",
) -> GradCheckReport:
    """Compare every analytic parameter gradient against central differences.

    ``builder`` returns the parameter stores and a loss function taking an
    optional tape; the loss must be deterministic across calls.
    """
    stores, loss_fn = builder()
    for s in stores:
        s.zero_grad()
    tape = Tape()
    tape.backward(loss_fn(tape))
    report = GradCheckReport(label, tolerance)
    for s in stores:
        for name in s.names():
            analytic = s.grads[name].copy()
            numeric = numeric_grad(s, name, loss_fn, eps)
            err = relative_error(analytic, numeric)
            report.entries.append(GradCheckEntry(name, err, err < tolerance))
        s.zero_grad()
    return report
