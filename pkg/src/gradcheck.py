"""
Finite-difference verification of taped gradients.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List

import numpy as np

from .errors import ContractError
from .models import ParamGroup
from .tensor import Tensor, backward, detect_anomaly, no_grad


@dataclass
class GradCheckReport:
    errors: Dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def failed(self) -> List[str]:
        return [name for name, err in self.errors.items() if err > self.tol]

    @property
    def passed(self) -> bool:
        return not self.failed

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def _scalar(loss: Tensor) -> float:
    if loss.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {loss.shape}")
    return float(loss.data.reshape(-1)[0])


def grad_check(f: Callable[[], Tensor], groups: Iterable[ParamGroup],
               h: float = 1e-6, tol: float = 1e-4) -> GradCheckReport:
    """
    Compare the taped gradient of f() with central differences, element by
    element, for every unfrozen group. The error per element is
    |analytic - numeric| / max(1, |analytic|, |numeric|); the report keeps
    the maximum per group. f must be deterministic (no dropout).
    """
    groups = list(groups)
    active = [g for g in groups if not g.frozen]
    for group in active:
        for tensor in group:
            if tensor.dtype != np.float64:
                raise ContractError(f"grad_check needs 64-bit parameters, {tensor.name} is {tensor.dtype}")

    for group in groups:
        group.zero_grad()
    with detect_anomaly():
        backward(f())

    report = GradCheckReport(tol=tol)
    for group in active:
        worst = 0.0
        for tensor in group:
            if not tensor.requires_grad:
                continue
            analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            flat = tensor.data.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                with no_grad(), detect_anomaly():
                    flat[i] = original + h
                    plus = _scalar(f())
                    flat[i] = original - h
                    minus = _scalar(f())
                flat[i] = original
                numeric = (plus - minus) / (2.0 * h)
                a = float(analytic.reshape(-1)[i])
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                worst = max(worst, err)
        report.errors[group.name] = worst
        group.zero_grad()
    return report
