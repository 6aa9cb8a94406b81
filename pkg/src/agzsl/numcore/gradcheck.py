"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward, no_grad


def numerical_gradient(f: Callable[[], Tensor], params: Sequence[Parameter],
                       eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``f()`` with respect to every parameter coordinate."""
    out = []
    with no_grad():
        for p in params:
            base = p.value.copy()
            grad = np.zeros_like(base)
            flat = grad.reshape(-1)
            for i in range(base.size):
                probe = base.copy().reshape(-1)
                probe[i] += eps
                p.assign(probe.reshape(base.shape))
                hi = float(f().value)
                probe[i] -= 2 * eps
                p.assign(probe.reshape(base.shape))
                lo = float(f().value)
                flat[i] = (hi - lo) / (2 * eps)
            p.assign(base)
            out.append(grad)
    return out


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """max |a - n| / max(1, |a|) over all coordinates."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        err = np.abs(a - n) / np.maximum(1.0, np.abs(a))
        worst = max(worst, float(err.max()))
    return worst


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5) -> float:
    """Max relative error between ``backward`` and central differences.

    ``f`` must be deterministic in the parameters (freeze any sampled noise).
    """
    analytic = backward(f(), params)
    numeric = numerical_gradient(f, params, eps)
    return max_relative_error(analytic, numeric)
