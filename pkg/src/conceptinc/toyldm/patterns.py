"""Synthetic concepts: parametric latent patterns with their prompts.

Two families exist. A blob is a Gaussian bump with a per-channel signature;
stripes are a per-channel-signed cosine grating. The base model is pretrained
on random members described with vocabulary words; personalized concepts are
specific members bound to new concept tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from .text import COLORS, ORIENTATIONS, POSITIONS, SIZES, WIDTHS, PromptSpec


@dataclass(frozen=True)
class ConceptSpec:
    concept_id: str
    family: str = "blob"
    center: tuple[float, float] = (3.5, 3.5)
    radius: float = 1.6
    signature: tuple[float, ...] = COLORS["red"]
    angle: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0
    tokens: tuple[str, ...] = ()
    init_words: tuple[str, ...] = ()
    prompt_prefix: tuple[str, ...] = ("a",)

    def __post_init__(self):
        if self.family not in ("blob", "stripes"):
            raise ValueError(f"unknown family {self.family!r}")
        if not 1 <= len(self.tokens) <= 2:
            raise ValueError("a concept binds one or two tokens")
        if len(self.init_words) != len(self.tokens):
            raise ValueError("every concept token needs an initializer word")

    def prompt(self) -> PromptSpec:
        return PromptSpec(self.prompt_prefix + self.tokens)


def canonical_pattern(spec: ConceptSpec, height: int = 8, width: int = 8) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(height, dtype=float), np.arange(width, dtype=float), indexing="ij")
    if spec.family == "blob":
        cy, cx = spec.center
        shape = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * spec.radius**2))
    else:
        proj = xx * np.cos(spec.angle) + yy * np.sin(spec.angle)
        shape = np.cos(2.0 * np.pi * spec.frequency * proj / width + spec.phase)
    return shape[:, :, None] * np.asarray(spec.signature, dtype=float)[None, None, :]


def gen_concept_dataset(spec: ConceptSpec, n: int = 4, rng: nk.Rng | None = None, jitter: float = 0.05,
                        height: int = 8, width: int = 8) -> list[tuple[np.ndarray, PromptSpec]]:
    if n < 1:
        raise ValueError("dataset needs n >= 1")
    rng = rng or nk.Rng(0)
    base = canonical_pattern(spec, height, width)
    prompt = spec.prompt()
    return [(base + jitter * rng.normal(base.shape), prompt) for _ in range(n)]


def _nearby(rng, value, spread):
    return value + rng.uniform(-spread, spread, size=np.shape(value))


def random_pretrain_sample(rng: nk.Rng, height: int = 8, width: int = 8) -> tuple[np.ndarray, PromptSpec]:
    """One generic (latent, prompt) pair from the pretraining distribution."""
    color = list(COLORS)[rng.integers(0, len(COLORS))]
    sig = _nearby(rng, np.asarray(COLORS[color]), 0.25)
    if rng.uniform() < 0.5:
        pos = list(POSITIONS)[rng.integers(0, len(POSITIONS))]
        size = list(SIZES)[rng.integers(0, len(SIZES))]
        spec = ConceptSpec("pre", "blob", tuple(_nearby(rng, np.asarray(POSITIONS[pos]), 0.8)),
                           float(_nearby(rng, SIZES[size], 0.2)), tuple(sig), tokens=("x",), init_words=("x",))
        words = ("a", size, color, "blob", "at", pos)
    else:
        orient = list(ORIENTATIONS)[rng.integers(0, len(ORIENTATIONS))]
        wid = list(WIDTHS)[rng.integers(0, len(WIDTHS))]
        spec = ConceptSpec("pre", "stripes", signature=tuple(sig),
                           angle=float(_nearby(rng, ORIENTATIONS[orient], 0.2)),
                           frequency=float(_nearby(rng, WIDTHS[wid], 0.25)),
                           phase=float(rng.uniform(0, 2 * np.pi)), tokens=("x",), init_words=("x",))
        words = ("a", wid, color, orient, "stripes")
    return canonical_pattern(spec, height, width), PromptSpec(words)
