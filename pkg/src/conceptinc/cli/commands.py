"""Command implementations shared by the argument parser and the test-suite.

Stores live under ``<store>/cidm`` and ``<store>/baseline``. The full
method also keeps one shared-subspace snapshot per task, so relearning a
task can restart from the state its predecessor left.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import numkit as nk
from ..adapters.learner import TaskLearner, init_task_learner
from ..adapters.store import LearnerStore
from ..continual.subspace import SharedSubspace, load_subspace, save_subspace
from ..continual.trainer import RunLog, learn_task
from ..errors import IntegrityError, SequencingError, StateError
from ..inference.merge import MergeReport, ewa_merge
from ..inference.regions import RegionCondition
from ..inference.sampler import sample
from ..toyldm.model import ToyModel, build_model
from ..toyldm.patterns import ConceptSpec, canonical_pattern
from ..toyldm.text import PromptSpec
from . import artifacts
from .config import RunConfig

log = logging.getLogger(__name__)

METHODS = ("cidm", "baseline")


def load_model(cfg: RunConfig, progress=None) -> ToyModel:
    """Base model for ``cfg``, pretrained once and cached at ``cfg.base_path``."""
    return build_model(cfg.model, cfg.base_path, progress=progress)


def method_dir(cfg: RunConfig, method: str) -> Path:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    return Path(cfg.store) / method


def open_store(cfg: RunConfig, method: str) -> LearnerStore:
    return LearnerStore.open(method_dir(cfg, method), cfg.train_digest())


def _subspace_path(cfg: RunConfig, g: int) -> Path:
    return method_dir(cfg, "cidm") / f"subspace_{g:03d}.citf"


def _log_path(cfg: RunConfig, method: str, g: int) -> Path:
    return method_dir(cfg, method) / "logs" / f"task_{g:03d}.log"


# ------------------------------------------------------------------ learn


def cmd_learn(cfg: RunConfig, index: int, method: str = "cidm", *, force: bool = False,
              model: ToyModel | None = None) -> TaskLearner:
    """Learn task ``index`` (1-based) of the sequence and persist it."""
    if not 1 <= index <= len(cfg.tasks):
        raise SequencingError(f"task index {index} is outside the sequence 1..{len(cfg.tasks)}")
    store = open_store(cfg, method)
    if index <= len(store):
        if not force:
            raise StateError(f"task {index} is already stored for {method}; pass --force to relearn it")
        store.truncate(index - 1)
        if method == "cidm":
            for g in range(index, len(cfg.tasks) + 1):
                _subspace_path(cfg, g).unlink(missing_ok=True)
    elif index > len(store) + 1:
        raise SequencingError(f"task {index} needs tasks 1..{index - 1}; only {len(store)} stored for {method}")

    model = model or load_model(cfg)
    concepts = list(cfg.tasks[index - 1])
    run_log = RunLog(index)
    if method == "cidm":
        sub = load_subspace(_subspace_path(cfg, index - 1)) if index > 1 else SharedSubspace()
        tl, sub = learn_task(model, index, concepts, store, sub, cfg.train, run_log=run_log)
    else:
        init_from = store[index - 2] if index > 1 else None
        run_log.flags = ["regularizers=off", "subspace_update=none"]
        tl, sub = learn_task(model, index, concepts, store, None, cfg.train, regularized=False,
                             init_from=init_from, run_log=run_log)
    tl.meta["config_hash"] = cfg.train_digest()
    store.append(tl)
    if method == "cidm":
        save_subspace(sub, _subspace_path(cfg, index), cfg.train_digest())
    header = {"method": method, "concepts": ",".join(c.concept_id for c in concepts),
              "probe_monotone": str(run_log.probe_monotone()).lower()}
    artifacts.write_text(_log_path(cfg, method, index), run_log.to_text(header), cfg.train_digest(), cfg.seed)
    return tl


def learn_sequence(cfg: RunConfig, method: str, model: ToyModel | None = None, upto: int | None = None):
    """Learn every task not yet stored, up to ``upto`` (default: the whole sequence)."""
    model = model or load_model(cfg)
    upto = len(cfg.tasks) if upto is None else upto
    store = open_store(cfg, method)
    for g in range(len(store) + 1, upto + 1):
        log.info("learning task %d (%s)", g, method)
        cmd_learn(cfg, g, method, model=model)
    return open_store(cfg, method)


# ----------------------------------------------------------------- sample


@dataclass
class SampleOutput:
    latent: np.ndarray
    files: list[Path]
    report: MergeReport | None
    notes: list[str]


def method_deltas(store: LearnerStore, method: str):
    """``None`` lets the sampler merge (full method); the baseline uses its final learner directly."""
    if method == "cidm" or not len(store):
        return None
    return store[-1].deltas()


def cmd_sample(cfg: RunConfig, prompt: str, regions=(), method: str = "cidm", *, n: int = 1,
               out: Path | None = None, stem: str = "sample", model: ToyModel | None = None) -> SampleOutput:
    store = open_store(cfg, method)
    if not len(store):
        raise StateError(f"the {method} store at {method_dir(cfg, method)} is empty; run learn first")
    model = model or load_model(cfg)
    spec = PromptSpec.parse(prompt)
    conds = [r if isinstance(r, RegionCondition) else RegionCondition.parse(r) for r in regions]
    res = sample(model, spec, conds, store, cfg.guidance, deltas=method_deltas(store, method), n=n)
    out = Path(cfg.out if out is None else out)
    h, s = cfg.digest(), cfg.seed
    files = [artifacts.write_latent(out / artifacts.latent_name(stem, h, s), res.latent)]
    for i in range(n):
        files += artifacts.write_pgm_channels(out, f"{stem}-{i}", res.latent[i], h, s)
    body = [f"prompt={spec}", f"method={method}", f"shape={','.join(map(str, res.latent.shape))}"]
    body += [f"region={r}" for r in conds]
    body += [f"guidance.{k}={v}" for k, v in sorted(cfg.guidance.to_dict().items())]
    body += [f"note={x}" for x in res.notes]
    text = "\n".join(body) + "\n" + (res.report.to_text() if res.report is not None else "")
    files.append(artifacts.write_text(out / f"{stem}.txt", text, h, s))
    return SampleOutput(res.latent, files, res.report, res.notes)


def cmd_merge_info(cfg: RunConfig, prompt: str, model: ToyModel | None = None) -> MergeReport:
    store = open_store(cfg, "cidm")
    model = model or load_model(cfg)
    return ewa_merge(model, store, PromptSpec.parse(prompt))[1]


def cmd_inspect(cfg: RunConfig) -> str:
    """Human-readable summary of the config, the cached base and both stores."""
    lines = [f"config_hash={cfg.digest()}", f"train_hash={cfg.train_digest()}", f"seed={cfg.seed}",
             f"model_digest={cfg.model.digest()}", f"tasks={len(cfg.tasks)}"]
    base = cfg.base_path
    base_size = base.stat().st_size if base.exists() else 0
    lines.append(f"base={base} bytes={base_size}" if base_size else f"base={base} (not built)")
    for g, group in enumerate(cfg.tasks, 1):
        lines.append(f"task {g}: " + " ".join(f"{c.concept_id}={c.family}[{' '.join(c.tokens)}]" for c in group))
    for method in METHODS:
        store = open_store(cfg, method)
        lines.append(f"{method}: {len(store)} learned")
        for tl in store:
            path = method_dir(cfg, method) / LearnerStore.filename(tl.task_id)
            size = path.stat().st_size
            ratio = f" ({100.0 * size / base_size:.3f}% of base)" if base_size else ""
            lines.append(f"  task {tl.task_id}: tokens={','.join(tl.token_names())} bytes={size}{ratio}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------- forgetting


def concept_recovery_error(sampled, spec: ConceptSpec) -> float:
    """Mean squared error between sampled latent(s) and the concept's canonical pattern."""
    z = np.asarray(sampled, dtype=np.float64)
    h, w = z.shape[-3], z.shape[-2]
    target = canonical_pattern(spec, h, w)
    if z.shape[-3:] != target.shape:
        raise ValueError(f"latent shape {z.shape} does not match pattern shape {target.shape}")
    return float(np.mean((z - target) ** 2))


@dataclass
class TaskRecord:
    task: int
    concept_id: str
    prompt: str
    seed: int
    untrained: float
    own_cidm: float
    own_baseline: float
    final_cidm: float
    final_baseline: float


@dataclass
class ForgettingReport:
    config_hash: str
    seed: int
    steps: int
    samples: int
    scale: float
    tasks: list[TaskRecord] = field(default_factory=list)

    def __post_init__(self):
        for r in self.tasks:
            errs = (r.untrained, r.own_cidm, r.own_baseline, r.final_cidm, r.final_baseline)
            if any(not e >= 0 for e in errs):
                raise ValueError(f"task {r.task}: recovery errors must be non-negative")

    def early(self) -> list[TaskRecord]:
        return self.tasks[:-1] if len(self.tasks) > 1 else []

    def summary(self) -> dict:
        early = self.early()
        if not early:
            return {"early_tasks": 0}
        m = float(np.mean([r.final_cidm for r in early]))
        b = float(np.mean([r.final_baseline for r in early]))
        return {"early_tasks": len(early), "mean_final_cidm": m, "mean_final_baseline": b,
                "delta": b - m, "relative_margin": (b - m) / b if b > 0 else 0.0}

    def to_json(self) -> str:
        body = {"config_hash": self.config_hash, "seed": self.seed, "steps": self.steps,
                "samples": self.samples, "scale": self.scale,
                "tasks": [asdict(r) for r in self.tasks], "summary": self.summary()}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ForgettingReport":
        body = json.loads(text)
        try:
            return cls(body["config_hash"], body["seed"], body["steps"], body["samples"], body["scale"],
                       [TaskRecord(**r) for r in body["tasks"]])
        except (KeyError, TypeError) as exc:
            raise IntegrityError(f"malformed forgetting report: {exc}", "report") from exc


def _prompt_seed(cfg: RunConfig, concept_id: str) -> int:
    return int(nk.Rng(cfg.seed).child("eval", concept_id).integers(0, 2**31 - 1))


def _untrained_store(cfg: RunConfig, model: ToyModel, g: int) -> LearnerStore:
    rng = nk.Rng(cfg.train.seed).child("task", str(g)).child("init")
    tl = init_task_learner(g, list(cfg.tasks[g - 1]), model.vocab, model.weights.adapted_shapes(), rng)
    return LearnerStore([tl])


def cmd_eval_forgetting(cfg: RunConfig, model: ToyModel | None = None) -> ForgettingReport:
    """Recovery errors of each task's first concept, right after its task and after the last one."""
    G = len(cfg.tasks)
    stores = {m: open_store(cfg, m) for m in METHODS}
    for m, st in stores.items():
        if len(st) != G:
            raise SequencingError(f"{m} has {len(st)} of {G} tasks learned; learn the full sequence first")
    model = model or load_model(cfg)
    n = cfg.samples
    steps = cfg.guidance.steps or model.sched.T
    report = ForgettingReport(cfg.digest(), cfg.seed, steps, n, cfg.guidance.scale)

    def err(store, spec, seed, deltas):
        gc = replace(cfg.guidance, seed=seed)
        return concept_recovery_error(sample(model, spec.prompt(), [], store, gc, deltas=deltas, n=n).latent, spec)

    cid, base = stores["cidm"], stores["baseline"]
    for g in range(1, G + 1):
        spec = cfg.tasks[g - 1][0]
        seed = _prompt_seed(cfg, spec.concept_id)
        report.tasks.append(TaskRecord(
            task=g, concept_id=spec.concept_id, prompt=str(spec.prompt()), seed=seed,
            untrained=err(_untrained_store(cfg, model, g), spec, seed, {}),
            own_cidm=err(cid.prefix(g), spec, seed, None),
            own_baseline=err(base.prefix(g), spec, seed, base[g - 1].deltas()),
            final_cidm=err(cid, spec, seed, None),
            final_baseline=err(base, spec, seed, base[-1].deltas()),
        ))
        log.info("eval task %d: %s", g, report.tasks[-1])
    return report


def write_report(cfg: RunConfig, report: ForgettingReport, out: Path | None = None) -> Path:
    path = Path(cfg.out if out is None else out) / "forgetting.json"
    artifacts.atomic_write(path, report.to_json().encode("utf-8"))
    return path
