"""Task learners: per-task LoRA factors plus layer-wise concept tokens."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numkit as nk
from ..errors import IntegrityError, UniquenessError
from ..toyldm.denoiser import PROJECTIONS
from ..toyldm.patterns import ConceptSpec
from ..toyldm.text import Vocabulary
from .fileformat import read_container, to_stored_precision, write_container
from .lora import DEFAULT_RANK, LoraLayer, lora_delta

A_INIT_STD = 0.02


@dataclass
class TaskLearner:
    task_id: int
    lora: dict[tuple[int, str], LoraLayer]
    tokens: dict[str, np.ndarray]  # token -> [L, d]
    concepts: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def layers(self) -> int:
        return 1 + max(l for l, _ in self.lora)

    @property
    def concept_count(self) -> int:
        return len(self.concepts)

    def token_names(self) -> list[str]:
        return [t for _, toks in self.concepts for t in toks]

    def deltas(self) -> dict[tuple[int, str], np.ndarray]:
        return {key: lora_delta(layer) for key, layer in self.lora.items()}

    def finalize(self) -> "TaskLearner":
        """Round every tensor to stored (32-bit) precision."""
        for layer in self.lora.values():
            layer.A = to_stored_precision(layer.A)
            layer.B = to_stored_precision(layer.B)
        self.tokens = {k: to_stored_precision(v) for k, v in self.tokens.items()}
        return self

    def copy(self) -> "TaskLearner":
        return TaskLearner(
            self.task_id,
            {k: LoraLayer(v.A.copy(), v.B.copy()) for k, v in self.lora.items()},
            {k: v.copy() for k, v in self.tokens.items()},
            list(self.concepts),
            dict(self.meta),
        )

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for (l, p), layer in self.lora.items():
            out[f"lora.l{l}.{p}.A"] = layer.A
            out[f"lora.l{l}.{p}.B"] = layer.B
        for tok, rows in self.tokens.items():
            out[f"token.{tok}"] = rows
        return out


def init_task_learner(g: int, concepts: list[ConceptSpec], vocab: Vocabulary,
                      adapted_shapes: dict[tuple[int, str], tuple[int, int]], rng: nk.Rng,
                      rank: int = DEFAULT_RANK, taken_tokens=()) -> TaskLearner:
    """Fresh learner: ``A ~ N(0, 0.02^2)``, ``B = 0``; tokens copy their initializer word to every layer."""
    if not concepts:
        raise ValueError("a task needs at least one concept")
    taken = set(taken_tokens)
    seen = set()
    for spec in concepts:
        for tok in spec.tokens:
            if tok in taken or tok in seen:
                raise UniquenessError(f"concept token {tok!r} is already bound")
            if tok in vocab:
                raise UniquenessError(f"concept token {tok!r} shadows a vocabulary word")
            seen.add(tok)
    rng = rng.child("task-learner", str(g))
    layers = 1 + max(l for l, _ in adapted_shapes)
    lora = {}
    for (l, p), (a, b) in sorted(adapted_shapes.items()):
        A = to_stored_precision(rng.child("A", str(l), p).normal((a, rank), std=A_INIT_STD))
        lora[(l, p)] = LoraLayer(A, np.zeros((rank, b)))
    tokens = {}
    for spec in concepts:
        for tok, word in zip(spec.tokens, spec.init_words):
            tokens[tok] = to_stored_precision(np.repeat(vocab.row(word)[None, :], layers, axis=0))
    return TaskLearner(g, lora, tokens, [(s.concept_id, tuple(s.tokens)) for s in concepts])


def _concepts_field(concepts) -> str:
    return ";".join(f"{cid}:{','.join(toks)}" for cid, toks in concepts)


def _parse_concepts(text: str):
    out = []
    for part in filter(None, text.split(";")):
        cid, _, toks = part.partition(":")
        out.append((cid, tuple(toks.split(","))))
    return out


def save_learner(tl: TaskLearner, path, config_hash: str = "") -> int:
    meta = dict(tl.meta)
    meta.update(kind="task-learner", task_id=str(tl.task_id), concepts=_concepts_field(tl.concepts),
                config_hash=config_hash or tl.meta.get("config_hash", ""))
    return write_container(path, meta, tl.tensors())


def load_learner(path) -> TaskLearner:
    meta, tensors = read_container(path)
    if meta.get("kind") != "task-learner":
        raise IntegrityError(f"{path} is not a task learner", "kind")
    try:
        task_id = int(meta["task_id"])
        concepts = _parse_concepts(meta["concepts"])
    except (KeyError, ValueError) as exc:
        raise IntegrityError(f"learner manifest incomplete: {exc}", "manifest") from exc
    lora, parts = {}, {}
    tokens = {}
    for name, arr in tensors.items():
        if name.startswith("lora."):
            _, lname, proj, which = name.split(".")
            parts.setdefault((int(lname[1:]), proj), {})[which] = arr
        elif name.startswith("token."):
            tokens[name[len("token."):]] = arr
    for key, ab in parts.items():
        if set(ab) != {"A", "B"}:
            raise IntegrityError(f"learner is missing a factor for {key}", f"lora.l{key[0]}.{key[1]}")
        lora[key] = LoraLayer(ab["A"], ab["B"])
    for _, toks in concepts:
        for tok in toks:
            if tok not in tokens:
                raise IntegrityError(f"learner lacks embedding rows for {tok!r}", f"token.{tok}")
    extra = {k: v for k, v in meta.items() if k not in ("kind", "task_id", "concepts")}
    return TaskLearner(task_id, dict(sorted(lora.items())), tokens, concepts, extra)


__all__ = ["PROJECTIONS", "TaskLearner", "init_task_learner", "load_learner", "save_learner"]
