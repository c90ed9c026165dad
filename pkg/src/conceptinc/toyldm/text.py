"""Stub text encoder: a contextless, layer-aware embedding lookup.

Vocabulary rows are fixed seeded vectors shared by every layer. Concept
tokens carry one learnable row per layer, so the layer-``l`` prompt matrix
differs from the others only where concept tokens appear.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from ..errors import VocabularyError

COLORS = {
    "red": (1.0, -0.5, 0.0, 0.5),
    "green": (-0.5, 1.0, 0.5, 0.0),
    "blue": (0.0, 0.5, -0.5, 1.0),
    "gold": (1.0, 1.0, -0.5, 0.0),
    "violet": (0.5, -0.5, 1.0, -1.0),
    "gray": (-0.7, -0.7, -0.7, -0.7),
}
POSITIONS = {
    "top-left": (1.8, 1.8), "top": (1.8, 3.5), "top-right": (1.8, 5.2),
    "left": (3.5, 1.8), "center": (3.5, 3.5), "right": (3.5, 5.2),
    "bottom-left": (5.2, 1.8), "bottom": (5.2, 3.5), "bottom-right": (5.2, 5.2),
}
SIZES = {"small": 1.1, "medium": 1.6, "large": 2.2}
ORIENTATIONS = {"horizontal": 0.0, "diagonal": np.pi / 4, "vertical": np.pi / 2, "antidiagonal": 3 * np.pi / 4}
WIDTHS = {"wide": 1.0, "narrow": 2.0}
FAMILIES = ("blob", "stripes")
FILLERS = ("a", "photo", "of", "at", "with", "sks", "zwx", "qpl", "vek", "tor")

WORDS: tuple[str, ...] = (
    FILLERS + FAMILIES + tuple(COLORS) + tuple(POSITIONS) + tuple(SIZES) + tuple(ORIENTATIONS) + tuple(WIDTHS)
)


@dataclass(frozen=True)
class PromptSpec:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @classmethod
    def parse(cls, text: str) -> "PromptSpec":
        return cls(tuple(text.split()))

    def __str__(self):
        return " ".join(self.tokens)


@dataclass
class PromptEmbedding:
    """``per_layer[l]`` is an ``[n_e, d]`` matrix (array or recorded node)."""

    per_layer: list
    length: int

    @property
    def layers(self) -> int:
        return len(self.per_layer)


class Vocabulary:
    def __init__(self, dim: int, rng: nk.Rng, words=WORDS):
        self.words = tuple(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.table = rng.child("vocab").normal((len(self.words), dim), std=1.0 / np.sqrt(dim))
        self.table.setflags(write=False)

    def row(self, word: str) -> np.ndarray:
        try:
            return self.table[self.index[word]]
        except KeyError:
            raise VocabularyError(f"unknown token {word!r}") from None

    def __contains__(self, word):
        return word in self.index

    def digest(self) -> str:
        return hashlib.sha256(self.table.tobytes()).hexdigest()


def encode_prompt(spec: PromptSpec, vocab: Vocabulary, concept_store: dict, layers: int, max_tokens: int
                  ) -> PromptEmbedding:
    """Layer-wise prompt matrices.

    ``concept_store`` maps a concept token to a sequence of ``layers`` rows
    (arrays or recorded nodes). Padded positions are zero rows.
    """
    if len(spec.tokens) > max_tokens:
        raise ValueError(f"prompt has {len(spec.tokens)} tokens, limit is {max_tokens}")
    for tok in spec.tokens:
        if tok not in concept_store and tok not in vocab:
            raise VocabularyError(f"unknown token {tok!r}")
    dim = vocab.table.shape[1]
    pad = [np.zeros(dim)] * (max_tokens - len(spec.tokens))
    if not any(tok in concept_store for tok in spec.tokens):
        shared = np.stack([vocab.row(t) for t in spec.tokens] + pad)
        return PromptEmbedding([shared] * layers, len(spec.tokens))
    per_layer = []
    for l in range(layers):
        rows = [concept_store[t][l] if t in concept_store else vocab.row(t) for t in spec.tokens]
        per_layer.append(nk.stack(rows + pad))
    return PromptEmbedding(per_layer, len(spec.tokens))
