"""Central finite-difference validation of analytic gradients.

The harness perturbs leaf tensor buffers in place, rebuilds the forward graph
through a caller-supplied closure, and compares the numeric slope against the
recorded backward pass. Relative error uses max(1, |analytic|, |numeric|) as
the denominator so tiny gradients degenerate into an absolute check at the
same tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

__all__ = ["GradCheckResult", "check_gradients"]

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    checked: int
    worst_leaf: str = ""

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: max rel err {self.max_rel_error:.3e} "
            f"(tol {self.tolerance:.1e}, {self.checked} coords, worst at {self.worst_leaf})"
        )


def _coords_to_check(shape, sample, rng):
    total = int(np.prod(shape)) if shape else 1
    if sample is None or sample >= total:
        return [np.unravel_index(i, shape) if shape else () for i in range(total)]
    picks = rng.choice(total, size=sample, replace=False)
    return [np.unravel_index(int(i), shape) if shape else () for i in picks]


def check_gradients(name, make_loss, leaves, step=DEFAULT_STEP, tolerance=DEFAULT_TOL,
                    sample=None, rng=None) -> GradCheckResult:
    """Compare analytic gradients of ``make_loss()`` against central differences.

    ``leaves`` maps label -> Tensor; every tensor must require grad and be a
    leaf whose ``data`` buffer feeds the graph built by ``make_loss``. With
    ``sample`` set, only that many coordinates per leaf are perturbed
    (seeded through ``rng``).
    """
    rng = rng or np.random.default_rng(0)
    for t in leaves.values():
        if not isinstance(t, Tensor) or not t.requires_grad:
            raise ValueError("gradient check leaves must be Tensors with requires_grad")
        t.zero_grad()

    loss = make_loss()
    loss.backward()
    analytic = {label: (t.grad.copy() if t.grad is not None else np.zeros(t.shape))
                for label, t in leaves.items()}

    worst = 0.0
    worst_leaf = ""
    checked = 0
    for label, t in leaves.items():
        buf = t.data
        for idx in _coords_to_check(t.shape, sample, rng):
            original = buf[idx]
            buf[idx] = original + step
            hi = make_loss().item()
            buf[idx] = original - step
            lo = make_loss().item()
            buf[idx] = original
            numeric = (hi - lo) / (2.0 * step)
            a = analytic[label][idx]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            checked += 1
            if rel > worst:
                worst = rel
                worst_leaf = f"{label}{tuple(int(i) for i in idx)}"
    for t in leaves.values():
        t.zero_grad()
    return GradCheckResult(name, worst, tolerance, checked, worst_leaf)
