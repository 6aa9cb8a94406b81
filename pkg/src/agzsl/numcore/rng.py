from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Rng:
    """Seeded PCG64 stream; ``stream`` selects an independent substream.

    ``stream`` may be an int or a tuple of ints, e.g. ``(STEP, 17)``.
    """

    def __init__(self, seed: int, stream: int | tuple[int, ...] = 0):
        self.seed = int(seed)
        self.stream = stream if isinstance(stream, tuple) else (int(stream),)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, *stream: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(stream))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size=None, replace: bool = True, p=None) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace, p=p)


def gaussian(rng: Rng, shape) -> Tensor:
    """I.i.d. standard normal constant tensor."""
    return Tensor(rng.normal(shape))
