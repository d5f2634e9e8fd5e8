"""
Adam over parameter groups, with global gradient-norm clipping.
"""

import logging
import math
from typing import Dict, Iterable, List, Optional

import numpy as np

from .models import ParamGroup
from .tensor import Tensor

logger = logging.getLogger(__name__)


def clip_grad_norm(tensors: Iterable[Tensor], max_norm: float) -> float:
    """Rescale grads so their joint L2 norm is at most max_norm; returns the norm before clipping."""
    tensors = [t for t in tensors if t.grad is not None]
    total = math.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in tensors))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for t in tensors:
            t.grad = t.grad * scale
    return total


class Adam:
    """
    One instance owns the moment estimates of the groups it was built with.
    Frozen groups are skipped, so their bytes never change.
    """

    def __init__(self, groups: Iterable[ParamGroup], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8, clip: float = 0.0):
        self.groups: List[ParamGroup] = list(groups)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip = clip
        self.t = 0
        self._m: Dict[int, np.ndarray] = {}
        self._v: Dict[int, np.ndarray] = {}

    def trainable(self) -> List[Tensor]:
        return [t for g in self.groups if not g.frozen for t in g if t.requires_grad]

    def zero_grad(self):
        for group in self.groups:
            group.zero_grad()

    def step(self) -> Optional[float]:
        tensors = self.trainable()
        norm = clip_grad_norm(tensors, self.clip) if self.clip > 0 else None
        if self.lr == 0:
            return norm
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for tensor in tensors:
            if tensor.grad is None:
                continue
            key = id(tensor)
            m = self._m.get(key)
            if m is None:
                m = self._m[key] = np.zeros_like(tensor.data)
                self._v[key] = np.zeros_like(tensor.data)
            v = self._v[key]
            g = tensor.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            tensor.data -= update.astype(tensor.dtype)
        return norm
