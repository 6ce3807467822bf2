"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamStore
from .tape import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from exploding the ratio."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradient_check(model_fn: Callable[[Tape], Tensor], store: ParamStore, tol: float = 1e-4, step: float = 1e-5,
                   max_per_param: int | None = None, rng: np.random.Generator | None = None,
                   tape_factory: Callable[[], Tape] = Tape) -> GradCheckReport:
    """Compare tape gradients with central differences for every parameter.

    ``model_fn`` must build the loss from ``store`` on the tape it receives and
    be deterministic. ``max_per_param`` samples that many entries per tensor
    (all entries when None). ``store`` should be float64.
    """
    store.zero_grad()
    tape = tape_factory()
    loss = model_fn(tape)
    tape.backward(loss)
    analytic = {k: (np.zeros_like(p.value) if p.grad is None else p.grad.copy()) for k, p in store.params.items()}
    store.zero_grad()

    def loss_at() -> float:
        return float(model_fn(Tape(check_finite=False)).value[0, 0])

    report = GradCheckReport(0.0, tol=tol)
    rng = rng or np.random.default_rng(0)
    for name, p in store.params.items():
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = rng.choice(flat.size, max_per_param, replace=False)
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at()
            flat[i] = orig - step
            down = loss_at()
            flat[i] = orig
            numeric[n] = (up - down) / (2 * step)
        err = relative_error(analytic[name].reshape(-1)[idx], numeric)
        worst = float(err.max()) if len(err) else 0.0
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        report.checked += len(idx)
    return report
