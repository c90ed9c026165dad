"""Per-task training: diffusion loss plus regularizers, optimized in two steps.

Step 1 moves the current task's concept tokens and LoRA factors with Adam
while the shared subspace is held fixed. Step 2 (from the second task on)
holds those fixed and takes one descent step on every ``H_i`` and ``W_*``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .. import numkit as nk
from ..adapters.learner import TaskLearner, init_task_learner
from ..adapters.lora import LoraLayer
from ..adapters.store import LearnerStore
from ..errors import ConfigError, ContractError, NumericError
from ..toyldm.denoiser import denoiser_forward
from ..toyldm.model import ToyModel
from ..toyldm.patterns import ConceptSpec, gen_concept_dataset
from ..toyldm.text import PromptEmbedding, PromptSpec, encode_prompt
from .regularizers import r1_orth, r2_shared
from .subspace import SharedSubspace, shared_subspace_step

log = logging.getLogger(__name__)

PROBE_TIMESTEPS = 8
CHECKPOINTS = (0.0, 0.25, 0.5, 0.75, 1.0)
SIGN_FLAG = "subspace_update=descent"


@dataclass(frozen=True)
class TrainConfig:
    gamma1: float = 0.1
    gamma2: float = 1.0
    steps: int = 800
    lr_tokens: float = 1e-3
    lr_weights: float = 1e-4
    eta: float | None = None
    batch_size: int = 4
    samples_per_concept: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.samples_per_concept < 1:
            raise ConfigError("steps, batch_size and samples_per_concept must be at least 1")
        if not (self.lr_tokens > 0 and self.lr_weights > 0 and self.step_size > 0):
            raise ConfigError("learning rates must be positive")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ConfigError("regularizer weights must be non-negative")

    @property
    def step_size(self) -> float:
        """Rate for the subspace descent step; defaults to the LoRA rate."""
        return self.lr_weights if self.eta is None else self.eta

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def without_regularizers(self) -> "TrainConfig":
        return replace(self, gamma1=0.0, gamma2=0.0)


@dataclass
class Batch:
    z0: np.ndarray
    z_t: np.ndarray
    ts: np.ndarray
    eps: np.ndarray
    prompts: list[PromptSpec]


@dataclass
class RunLog:
    """Per-step records plus run-level flags, written as plain text."""

    task_id: int
    flags: list[str] = field(default_factory=lambda: [SIGN_FLAG])
    steps: list[tuple[int, float, float, float]] = field(default_factory=list)
    probes: list[tuple[int, float]] = field(default_factory=list)

    def record(self, step, loss, r1, r2):
        self.steps.append((step, loss, r1, r2))

    def probe_monotone(self) -> bool:
        vals = [v for _, v in self.probes]
        return all(b <= a for a, b in zip(vals, vals[1:]))

    def to_text(self, header: dict | None = None) -> str:
        lines = [f"# task {self.task_id}"]
        lines += [f"# {k}={v}" for k, v in sorted((header or {}).items())]
        lines += [f"# flag {f}" for f in self.flags]
        lines += [f"probe step={s} loss={v!r}" for s, v in self.probes]
        lines += [f"step={s} loss={l!r} r1={a!r} r2={b!r}" for s, l, a, b in self.steps]
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ data


def task_dataset(concepts: list[ConceptSpec], cfg: TrainConfig, model: ToyModel, rng: nk.Rng):
    mc = model.cfg
    items = []
    for spec in concepts:
        items += gen_concept_dataset(spec, cfg.samples_per_concept, rng.child("concept", spec.concept_id),
                                     height=mc.height, width=mc.width)
    return items


def make_batch(dataset, model: ToyModel, rng: nk.Rng, size: int, ts=None) -> Batch:
    """Noised minibatch drawn with replacement (the whole set, in order, if it fits)."""
    if size >= len(dataset):
        idx = np.arange(len(dataset))
    else:
        idx = rng.integers(0, len(dataset), size=size)
    z0 = np.stack([dataset[i][0] for i in idx])
    prompts = [dataset[i][1] for i in idx]
    T = model.sched.T
    ts = rng.integers(1, T + 1, size=len(idx)) if ts is None else np.asarray(ts)
    eps = rng.normal(z0.shape)
    ab = model.sched.alpha_bar[ts - 1][:, None, None, None]
    z_t = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
    return Batch(z0, z_t, ts, eps, prompts)


def probe_batch(dataset, model: ToyModel, rng: nk.Rng) -> Batch:
    """Fixed evaluation batch: every item at evenly spaced timesteps."""
    T = model.sched.T
    grid = np.unique(np.linspace(1, T, PROBE_TIMESTEPS).round().astype(int))
    rows = [(item, t) for item in dataset for t in grid]
    return make_batch([r[0] for r in rows], model, rng, len(rows), ts=[r[1] for r in rows])


# --------------------------------------------------------------- leaves


def learner_leaves(tl: TaskLearner) -> dict:
    """Recorded leaves for every trainable tensor of ``tl``, keyed like :meth:`TaskLearner.tensors`."""
    return {name: nk.param(arr) for name, arr in tl.tensors().items()}


def _lora_of(leaves, keys):
    return {k: (leaves[f"lora.l{k[0]}.{k[1]}.A"], leaves[f"lora.l{k[0]}.{k[1]}.B"]) for k in keys}


def _encode_batch(batch: Batch, model: ToyModel, concept_rows) -> PromptEmbedding:
    mc = model.cfg
    embs = [encode_prompt(p, model.vocab, concept_rows, mc.layers, mc.max_tokens) for p in batch.prompts]
    per_layer = [nk.stack([e.per_layer[l] for e in embs]) for l in range(mc.layers)]
    return PromptEmbedding(per_layer, np.array([e.length for e in embs]))


def diffusion_loss(model: ToyModel, batch: Batch, deltas, concept_rows):
    """Batch mean of ``||eps - eps_theta(z_t | c, t)||^2``."""
    cond = _encode_batch(batch, model, concept_rows)
    pred = denoiser_forward(batch.z_t, batch.ts, cond, model.weights, deltas=deltas)
    B = batch.z_t.shape[0]
    return nk.mul(nk.sum_(nk.square(nk.sub(batch.eps, pred))), 1.0 / B)


def _loss_terms(model, batch, tl, leaves, prev: LearnerStore, subspace, cfg, regularized):
    keys = sorted(tl.lora)
    factors = _lora_of(leaves, keys)
    deltas = {k: nk.matmul(a, b) for k, (a, b) in factors.items()}
    rows = {tok: [nk.take(leaves[f"token.{tok}"], l) for l in range(model.cfg.layers)] for tok in tl.tokens}
    diff = diffusion_loss(model, batch, deltas, rows)
    total, r1, r2 = diff, 0.0, 0.0
    if regularized and len(prev) and cfg.gamma1 > 0:
        prev_A = [{k: layer.A for k, layer in p.lora.items()} for p in prev]
        r1 = r1_orth(prev_A, {k: a for k, (a, _) in factors.items()})
        total = nk.add(total, nk.mul(r1, cfg.gamma1))
    if regularized and len(prev) and cfg.gamma2 > 0:
        all_deltas = {p.task_id: p.deltas() for p in prev}
        all_deltas[tl.task_id] = deltas
        r2 = r2_shared(all_deltas, subspace)
        total = nk.add(total, nk.mul(r2, cfg.gamma2))
    return total, diff, r1, r2


def ccl_loss(model: ToyModel, batch: Batch, learner: TaskLearner, prev: LearnerStore,
             subspace: SharedSubspace, cfg: TrainConfig, leaves=None):
    """Diffusion loss plus ``gamma1 * R1 + gamma2 * R2`` for task ``g >= 2``.

    ``leaves`` (from :func:`learner_leaves`) makes the result differentiable in
    the learner's tensors; without it a plain scalar array is returned.
    """
    if not len(prev):
        raise ContractError("the first task has no regularizers; use diffusion_loss")
    values = leaves if leaves is not None else learner.tensors()
    return _loss_terms(model, batch, learner, values, prev, subspace, cfg, True)[0]


# ---------------------------------------------------------------- training


def _scalar(x) -> float:
    return float(np.asarray(nk.value_of(x)).sum())


def learn_task(model: ToyModel, task_id: int, concepts: list[ConceptSpec], prev: LearnerStore,
               subspace: SharedSubspace | None = None, cfg: TrainConfig | None = None, *,
               regularized: bool = True, init_from: TaskLearner | None = None,
               run_log: RunLog | None = None, on_step=None) -> tuple[TaskLearner, SharedSubspace]:
    """Train one task and return its finalized learner and the updated subspace.

    ``regularized=False`` with ``init_from`` set gives the naive sequential
    finetune: LoRA factors continue from ``init_from`` and no regularizer or
    subspace step runs. ``on_step(step, learner, subspace)`` is called after
    each full step with live (unfinalized) state.
    """
    cfg = cfg or TrainConfig()
    subspace = SharedSubspace() if subspace is None else subspace.copy()
    run_log = run_log if run_log is not None else RunLog(task_id)
    root = nk.Rng(cfg.seed).child("task", str(task_id))
    shapes = model.weights.adapted_shapes()

    tl = init_task_learner(task_id, concepts, model.vocab, shapes, root.child("init"),
                           taken_tokens=prev.tokens)
    if init_from is not None:
        tl.lora = {k: LoraLayer(v.A.copy(), v.B.copy()) for k, v in init_from.lora.items()}

    g_multi = regularized and len(prev) > 0
    if g_multi:
        subspace.ensure(shapes, [p.task_id for p in prev] + [task_id], root)

    dataset = task_dataset(concepts, cfg, model, root.child("data"))
    probe = probe_batch(dataset, model, root.child("probe"))
    batch_rng = root.child("batches")
    names = sorted(tl.tensors())
    arrays = dict(tl.tensors())
    arrays = {n: np.array(arrays[n], dtype=np.float64) for n in names}
    opt = nk.Adam([arrays[n] for n in names],
                  [cfg.lr_tokens if n.startswith("token.") else cfg.lr_weights for n in names])

    def sync():
        for key, layer in tl.lora.items():
            layer.A = arrays[f"lora.l{key[0]}.{key[1]}.A"]
            layer.B = arrays[f"lora.l{key[0]}.{key[1]}.B"]
        tl.tokens = {tok: arrays[f"token.{tok}"] for tok in tl.tokens}

    def probe_loss():
        return _scalar(_loss_terms(model, probe, tl, arrays, prev, subspace, cfg, False)[1])

    sync()
    marks = {max(1, round(f * cfg.steps)) if f else 0 for f in CHECKPOINTS}
    if 0 in marks:
        run_log.probes.append((0, probe_loss()))
    for step in range(1, cfg.steps + 1):
        batch = make_batch(dataset, model, batch_rng, cfg.batch_size)
        leaves = {n: nk.param(arrays[n]) for n in names}
        total, _, r1, r2 = _loss_terms(model, batch, tl, leaves, prev, subspace, cfg, g_multi)
        loss = _scalar(total)
        if not np.isfinite(loss):
            raise NumericError(f"task {task_id}: non-finite loss at step {step}")
        grads = nk.grad(total, [leaves[n] for n in names])
        for n, gr in zip(names, grads):
            if not np.all(np.isfinite(gr)):
                raise NumericError(f"task {task_id}: non-finite gradient for {n} at step {step}")
        opt.step(grads)

        if g_multi:
            deltas = {p.task_id: p.deltas() for p in prev}
            deltas[task_id] = tl.deltas()
            try:
                subspace = shared_subspace_step(subspace, deltas, cfg.step_size)
            except NumericError as exc:
                raise NumericError(f"task {task_id}: {exc} at step {step}") from exc

        run_log.record(step, loss, _scalar(r1), _scalar(r2))
        if step in marks:
            run_log.probes.append((step, probe_loss()))
        if on_step is not None:
            on_step(step, tl, subspace)
    log.info("task %d done: final loss %.5f", task_id, run_log.steps[-1][1])

    tl = tl.copy().finalize()
    tl.meta.update(method="cidm" if regularized else "baseline", steps=str(cfg.steps), seed=str(cfg.seed))
    return tl, subspace.finalize()
