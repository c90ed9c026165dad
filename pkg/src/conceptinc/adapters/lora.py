from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from ..errors import AdapterError

DEFAULT_RANK = 4


@dataclass
class LoraLayer:
    """Low-rank factors of one adapted projection; ``delta = A @ B``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        a, r = np.shape(self.A)
        r2, b = np.shape(self.B)
        if r != r2:
            raise AdapterError(f"factor ranks differ: A is {np.shape(self.A)}, B is {np.shape(self.B)}")
        if r > min(a, b):
            raise AdapterError(f"rank {r} exceeds min({a}, {b})")

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape[0], self.B.shape[1]


def lora_delta(layer: LoraLayer) -> np.ndarray:
    return nk.matmul(layer.A, layer.B)
