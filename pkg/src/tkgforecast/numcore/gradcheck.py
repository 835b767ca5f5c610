"""Central finite-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tape, Tensor

# Below this magnitude a gradient entry is compared in absolute terms.
GRAD_FLOOR = 1e-6


@dataclass
class GradEntry:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), GRAD_FLOOR)
        return abs(self.analytic - self.numeric) / scale


@dataclass
class GradCheckReport:
    rtol: float
    entries: list[GradEntry] = field(default_factory=list)

    @property
    def failures(self) -> list[GradEntry]:
        return [e for e in self.entries if e.rel_error > self.rtol]

    @property
    def passed(self) -> bool:
        return bool(self.entries) and not self.failures

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    def summary(self) -> str:
        worst = max(self.entries, key=lambda e: e.rel_error, default=None)
        head = f"{len(self.entries)} entries, {len(self.failures)} failures, max rel err {self.max_rel_error:.2e}"
        if worst is None:
            return head
        return head + f" (worst {worst.name}{list(worst.index)}: {worst.analytic:.6g} vs {worst.numeric:.6g})"


def analytic_gradients(fn: Callable[[], Tensor], params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return {name: p.grad.copy() for name, p in params.items()}


def numeric_gradient(fn: Callable[[], Tensor], tensor: Tensor, index, eps: float = 1e-5) -> float:
    flat = tensor.data.reshape(-1)
    pos = np.ravel_multi_index(index, tensor.shape)
    orig = flat[pos]
    flat[pos] = orig + eps
    up = fn().item()
    flat[pos] = orig - eps
    down = fn().item()
    flat[pos] = orig
    return (up - down) / (2 * eps)


def check_gradients(fn: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5,
                    rtol: float = 1e-4, max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare tape gradients of the scalar ``fn()`` with central differences.

    ``max_entries`` caps the number of probed coordinates per tensor; the
    sample is drawn with ``rng`` (default seed 0).
    """
    rng = rng or np.random.default_rng(0)
    grads = analytic_gradients(fn, params)
    report = GradCheckReport(rtol=rtol)
    for name, p in params.items():
        n = p.size
        flat_ids = np.arange(n)
        if max_entries is not None and n > max_entries:
            flat_ids = np.sort(rng.choice(n, size=max_entries, replace=False))
        for fid in flat_ids:
            idx = np.unravel_index(fid, p.shape)
            num = numeric_gradient(fn, p, idx, eps)
            report.entries.append(GradEntry(name, tuple(int(i) for i in idx), float(grads[name][idx]), num))
    return report
