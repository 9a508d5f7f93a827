"""Adam with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Adam:
    params: dict
    lr: float = 1e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p.data))
            self.v.setdefault(k, np.zeros_like(p.data))

    def step(self, grads):
        """Apply one update in place. Nothing changes if any gradient is non-finite."""
        for k, g in grads.items():
            if k not in self.params:
                raise KeyError(f"gradient for unknown parameter {k}")
            if g.shape != self.params[k].data.shape:
                raise ValueError(f"{k}: gradient shape {g.shape} != {self.params[k].data.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {k}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, g in grads.items():
            p = self.params[k]
            m = self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            data = p.data * (1.0 - self.lr * self.weight_decay)
            p.data = data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state: Adam, grads):
    state.step(grads)
    return state.params, state
