from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Parameter, ShapeError


class Adam:
    """Bias-corrected Adam over a fixed list of parameters."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"gradient {g.shape} does not match parameter {p.name} {p.shape}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.assign(p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"{prefix}.m.{p.name}"] = m
            out[f"{prefix}.v.{p.name}"] = v
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray], t: int) -> None:
        for i, p in enumerate(self.params):
            m = arrays[f"{prefix}.m.{p.name}"]
            v = arrays[f"{prefix}.v.{p.name}"]
            if m.shape != p.shape or v.shape != p.shape:
                raise ShapeError(f"moment shape mismatch for {p.name}")
            self.m[i] = np.array(m, dtype=np.float64)
            self.v[i] = np.array(v, dtype=np.float64)
        self.t = int(t)
