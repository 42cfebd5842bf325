"""Adam optimizer with global-norm gradient clipping."""
from __future__ import annotations

import numpy as np

from .autograd import Parameter


class Adam:
    def __init__(
        self,
        parameters: list[Parameter],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float = 5.0,
    ):
        self.parameters = parameters
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = {p.name: np.zeros_like(p.values) for p in parameters}
        self._v = {p.name: np.zeros_like(p.values) for p in parameters}

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()

    def step(self) -> None:
        grads = {p.name: p.gradient for p in self.parameters}
        if self.clip_norm > 0:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                factor = self.clip_norm / total
                grads = {name: g * factor for name, g in grads.items()}
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for p in self.parameters:
            g = grads[p.name]
            m = self._m[p.name] = self.beta1 * self._m[p.name] + (1 - self.beta1) * g
            v = self._v[p.name] = self.beta2 * self._v[p.name] + (1 - self.beta2) * g * g
            update = self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.values = p.values - update
