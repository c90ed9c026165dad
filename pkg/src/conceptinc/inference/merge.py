"""Prompt-driven merging of stored task deltas.

For each layer, the prompt's embedding rows are compared with each task's
mean concept-token row; the best dot product per task is that task's
relation. Relations are squared and normalized, then used as merge weights
for the stored deltas of that layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..adapters.store import LearnerStore
from ..errors import StateError
from ..toyldm.model import ToyModel
from ..toyldm.text import PromptSpec, encode_prompt


@dataclass
class MergeReport:
    task_ids: list[int]
    relations: list[np.ndarray] = field(default_factory=list)  # per layer, length g
    weights: list[np.ndarray] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"tasks={','.join(map(str, self.task_ids))}"]
        for l, (m, w) in enumerate(zip(self.relations, self.weights)):
            lines.append(f"layer={l} relation={' '.join(repr(float(x)) for x in m)}")
            lines.append(f"layer={l} weight={' '.join(repr(float(x)) for x in w)}")
        return "\n".join(lines) + "\n"


def task_embeddings(store: LearnerStore, layer: int) -> np.ndarray:
    """Row ``i`` is the mean of task ``i``'s concept-token rows at ``layer``."""
    if not len(store):
        raise StateError("the learner store is empty")
    out = []
    for tl in store:
        rows = np.stack([tl.tokens[tok][layer] for tok in tl.token_names()])
        out.append(rows.mean(axis=0))
    return np.stack(out)


def semantic_relation(prompt_rows: np.ndarray, task_rows: np.ndarray) -> np.ndarray:
    """Per task, the largest dot product between any prompt row and the task row."""
    return (np.asarray(prompt_rows) @ np.asarray(task_rows).T).max(axis=0)


def psi_normalize(M) -> np.ndarray:
    """``M**2 / ||M**2||``; an all-zero ``M`` maps to the uniform unit vector."""
    sq = np.square(np.asarray(M, dtype=np.float64))
    norm = np.sqrt(np.sum(sq * sq))
    if norm == 0.0:
        return np.full(sq.shape, 1.0 / np.sqrt(sq.size))
    return sq / norm


def weighted_deltas(store: LearnerStore, weights_per_layer) -> dict:
    """``sum_i w_i^l * dW_i^l`` for every adapted projection."""
    stored = [tl.deltas() for tl in store]
    merged = {}
    for key in sorted(stored[0]):
        w = weights_per_layer[key[0]]
        acc = w[0] * stored[0][key]
        for i in range(1, len(stored)):
            acc = acc + w[i] * stored[i][key]
        merged[key] = acc
    return merged


def ewa_merge(model: ToyModel, store: LearnerStore, prompt: PromptSpec):
    """Per-layer merged deltas for ``prompt`` and the report of how they were weighted."""
    if not len(store):
        raise StateError("the learner store is empty")
    mc = model.cfg
    emb = encode_prompt(prompt, model.vocab, store.concept_store(), mc.layers, mc.max_tokens)
    report = MergeReport([tl.task_id for tl in store])
    for l in range(mc.layers):
        M = semantic_relation(np.asarray(emb.per_layer[l])[: emb.length], task_embeddings(store, l))
        report.relations.append(M)
        report.weights.append(psi_normalize(M))
    if len(store) == 1:
        return store[0].deltas(), report
    return weighted_deltas(store, report.weights), report
