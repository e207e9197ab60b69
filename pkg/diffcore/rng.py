"""
Seeded random streams.

SeededRng wraps numpy's PCG64 bit generator. Child streams are derived from
SeedSequence([seed, *key]) so a stream depends only on (seed, key), never on
how many draws other streams have made.
"""
from typing import Sequence

import numpy as np


class SeededRng:
    """Deterministic PCG64 stream: identical seed, identical draws on every platform"""

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed) % (2 ** 64)
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *key: int) -> "SeededRng":
        state = np.random.SeedSequence([self.seed, *[int(k) for k in key]]).generate_state(1, np.uint64)
        return SeededRng(int(state[0]))

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._generator.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._generator.integers(low, high, size)

    def random(self, size=None) -> np.ndarray:
        return self._generator.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, options: Sequence, p=None):
        return options[int(self._generator.choice(len(options), p=p))]

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """One draw per row of a (B, V) probability matrix by inverse CDF"""
        probs = np.atleast_2d(probs)
        cdf = np.cumsum(probs, axis=-1)
        u = self._generator.random(probs.shape[0]) * cdf[:, -1]
        ids = (cdf <= u[:, None]).sum(axis=-1)
        return np.minimum(ids, probs.shape[-1] - 1)
