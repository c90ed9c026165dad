"""Seeded randomness.

All draws come from NumPy's counter-based Philox4x64 bit generator keyed by a
``SeedSequence`` built from the root seed and a path of string labels. Child
streams are independent of how many values the parent has drawn.
"""

import hashlib

import numpy as np


def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class Rng:
    algorithm = "philox4x64-10"

    def __init__(self, seed: int = 0, path: tuple[str, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.path = tuple(path)
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32]
        for label in self.path:
            entropy.extend(_label_words(label))
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def child(self, *labels: str) -> "Rng":
        return Rng(self.seed, self.path + tuple(str(x) for x in labels))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape) * std

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high, size=None):
        """Integers in ``[low, high)``."""
        return self._gen.integers(low, high, size=size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path!r})"
