"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Tensor, zero_grad

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# Below this magnitude gradients are compared absolutely: float64 round-off in
# the difference quotient is ~1e-11, which would dominate a relative measure.
RELATIVE_FLOOR = 1e-4


class NonDeterministicError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_input: list[float] = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), RELATIVE_FLOOR)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    *,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    max_checks_per_input: int | None = None,
    seed: int = 0,
    corrupt: float = 0.0,
) -> GradCheckReport:
    """Compare backprop gradients of ``f()`` w.r.t. ``inputs`` against central differences.

    ``f`` closes over the input tensors and returns a scalar Tensor; inputs
    are perturbed in place.  With ``max_checks_per_input`` only that many
    randomly chosen coordinates per input are probed.  ``corrupt`` scales the
    analytic gradient by ``1 + corrupt`` (negative control for the harness).
    """
    inputs = list(inputs)
    first = f()
    second = f()
    if first.data.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {first.shape}")
    if not np.array_equal(first.data, second.data):
        raise NonDeterministicError("f() returned different values on two evaluations")

    zero_grad(inputs)
    first.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    zero_grad(inputs)

    rng = np.random.default_rng(seed)
    per_input: list[float] = []
    checked = 0
    for tensor, grad in zip(inputs, analytic):
        grad = grad * (1.0 + corrupt)
        tensor.data = np.ascontiguousarray(tensor.data)
        flat = tensor.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_checks_per_input is not None and flat.size > max_checks_per_input:
            coords = np.sort(rng.choice(flat.size, size=max_checks_per_input, replace=False))
        numeric = np.empty(coords.size)
        for n, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + step
            plus = f().item()
            flat[c] = orig - step
            minus = f().item()
            flat[c] = orig
            numeric[n] = (plus - minus) / (2.0 * step)
        err = relative_error(grad.reshape(-1)[coords], numeric)
        per_input.append(float(err.max()) if err.size else 0.0)
        checked += coords.size
    return GradCheckReport(max(per_input, default=0.0), tolerance, per_input, checked)
