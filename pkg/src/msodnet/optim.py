"""Adam with a single step-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .layers import map_tensors, named_tensors
from .tensor import Tensor


@dataclass
class StepDecay:
    """``lr`` until ``decay_step``, then ``lr * factor``."""

    lr: float
    decay_step: Optional[int] = None
    factor: float = 0.1

    def __call__(self, step: int) -> float:
        if self.decay_step is not None and step >= self.decay_step:
            return self.lr * self.factor
        return self.lr


@dataclass
class Adam:
    schedule: StepDecay
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return self.schedule(self.step_count)

    def step(self, params, grads: dict):
        """Return a new parameter tree after one update.

        ``grads`` maps parameter names to gradient arrays; parameters missing
        from it are treated as having zero gradient.
        """
        lr = self.lr
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t

        def update(name: str, p: Tensor) -> Tensor:
            g = grads.get(name)
            if g is None:
                g = np.zeros(p.shape)
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            if lr == 0.0:
                return p
            new = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            return Tensor(new, requires_grad=p.requires_grad)

        return map_tensors(params, update)


def collect_grads(params) -> dict:
    return {name: t.grad for name, t in named_tensors(params) if t.grad is not None}
