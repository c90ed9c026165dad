"""Run configuration: paths, training and guidance settings, and the task sequence.

A run config is read from an INI file with optional sections::

    [paths]     store, out, base
    [model]     any ModelConfig field
    [train]     any TrainConfig field
    [guidance]  any GuidanceConfig field
    [eval]      samples
    [tasks]     preset = toy3 | toy10
    [concept.<id>]  task, family, center, radius, signature, angle,
                    frequency, phase, tokens, init_words

Explicit ``concept.*`` sections replace the preset. The root ``seed`` (set
in ``[run]`` or on the command line) seeds both training and sampling.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..continual.trainer import TrainConfig
from ..errors import ConfigError
from ..inference.sampler import GuidanceConfig
from ..toyldm.config import ModelConfig, model_config_from_section
from ..toyldm.patterns import ConceptSpec

# Desk-scale training and evaluation settings. The library defaults are
# tuned for large models; at toy scale and 800 steps those rates leave the
# LoRA factors almost untouched, and strong guidance saturates samples.
TOY_TRAIN = TrainConfig(lr_tokens=1e-2, lr_weights=5e-3)
TOY_GUIDANCE = GuidanceConfig(scale=1.0)
EVAL_SAMPLES = 16


def _blob(cid, n, center, radius, signature, filler):
    return ConceptSpec(cid, "blob", center, radius, signature,
                       tokens=(f"v{n}", f"v{n}n"), init_words=(filler, "blob"))


def _stripes(cid, n, angle, frequency, signature, filler):
    return ConceptSpec(cid, "stripes", signature=signature, angle=angle, frequency=frequency,
                       tokens=(f"v{n}", f"v{n}n"), init_words=(filler, "stripes"))


# The first two tasks share the blob family ("semantically similar").
TOY3 = [
    [_blob("c1", 1, (2.5, 5.0), 1.4, (0.8, 0.6, -0.6, 0.2), "sks")],
    [_blob("c2", 2, (5.2, 2.2), 1.8, (-0.6, 0.4, 0.9, -0.3), "zwx")],
    [_stripes("c3", 3, 0.0, 1.0, (0.3, -0.9, 0.6, 0.7), "qpl")],
]

TOY10 = TOY3 + [
    [_blob("c4", 4, (2.0, 2.0), 1.2, (0.9, -0.2, 0.4, -0.7), "vek")],
    [_stripes("c5", 5, 1.5708, 1.0, (-0.8, 0.5, 0.2, 0.6), "tor")],
    [_blob("c6", 6, (5.5, 5.5), 1.6, (0.2, 0.9, -0.5, 0.4), "sks")],
    [_blob("c7", 7, (3.5, 3.5), 2.0, (-0.7, -0.6, 0.3, 0.8), "zwx")],
    [_stripes("c8", 8, 0.7854, 1.0, (0.6, 0.6, -0.8, -0.2), "qpl")],
    [_blob("c9", 9, (4.5, 1.5), 1.3, (0.5, -0.8, -0.6, 0.3), "vek")],
    [_stripes("c10", 10, 2.3562, 1.0, (-0.4, -0.7, 0.7, 0.5), "tor")],
]

PRESETS = {"toy3": TOY3, "toy10": TOY10}


def default_cache_dir() -> Path:
    return Path(os.environ.get("CONCEPTINC_CACHE", Path.home() / ".cache" / "conceptinc"))


@dataclass(frozen=True)
class RunConfig:
    store: Path = Path("runs/store")
    out: Path = Path("runs/out")
    base: Path | None = None  # None keeps the base in the shared cache directory
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = TOY_TRAIN
    guidance: GuidanceConfig = TOY_GUIDANCE
    tasks: tuple = tuple(tuple(g) for g in TOY3)
    samples: int = EVAL_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if not self.tasks or not all(self.tasks):
            raise ConfigError("the task sequence must be non-empty and every task needs a concept")
        if self.samples < 1:
            raise ConfigError("samples must be at least 1")
        ids = [c.concept_id for group in self.tasks for c in group]
        if len(set(ids)) != len(ids):
            raise ConfigError("concept ids must be unique across the sequence")

    @property
    def base_path(self) -> Path:
        if self.base is not None:
            return Path(self.base)
        return default_cache_dir() / f"base-{self.model.digest()}.citf"

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed),
                       guidance=replace(self.guidance, seed=seed))

    def with_guidance(self, **overrides) -> "RunConfig":
        kept = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, guidance=replace(self.guidance, **kept)) if kept else self

    def _body(self, include_guidance: bool) -> dict:
        body = {
            "model": self.model.to_dict(),
            "model_digest": self.model.digest(),
            "train": self.train.to_dict(),
            "tasks": [[_concept_dict(c) for c in g] for g in self.tasks],
            "seed": self.seed,
        }
        if include_guidance:
            body.update(guidance=self.guidance.to_dict(), samples=self.samples)
        return body

    def digest(self) -> str:
        """Hash of every setting that shapes an artifact (paths excluded)."""
        return _hash(self._body(True))

    def train_digest(self) -> str:
        """Hash of the settings that shape stored learners; guidance changes keep stores valid."""
        return _hash(self._body(False))


def _hash(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def _concept_dict(c: ConceptSpec) -> dict:
    d = dataclasses.asdict(c)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _numbers(raw: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad number list for {key}: {raw!r}") from exc


def _dataclass_section(cls, base, section) -> object:
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in section.items():
        if key not in kinds:
            raise ConfigError(f"unknown key {key!r} in [{cls.__name__}]")
        kind = str(kinds[key])
        try:
            if raw.strip().lower() == "none" and "None" in kind:
                values[key] = None
            elif kind.startswith("int"):
                values[key] = int(raw)
            elif kind.startswith("float"):
                values[key] = float(raw)
            else:
                values[key] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return replace(base, **values)


def _concept_section(cid: str, sec) -> tuple[int, ConceptSpec]:
    try:
        task = int(sec["task"])
        family = sec.get("family", "blob").strip()
        tokens = tuple(sec["tokens"].split())
        init_words = tuple(sec["init_words"].split())
    except KeyError as exc:
        raise ConfigError(f"[concept.{cid}] needs {exc.args[0]}") from None
    except ValueError as exc:
        raise ConfigError(f"[concept.{cid}] task must be an integer") from exc
    kw = {}
    if "center" in sec:
        kw["center"] = _numbers(sec["center"], "center")
    if "signature" in sec:
        kw["signature"] = _numbers(sec["signature"], "signature")
    for key in ("radius", "angle", "frequency", "phase"):
        if key in sec:
            kw[key] = _numbers(sec[key], key)[0]
    try:
        return task, ConceptSpec(cid, family, tokens=tokens, init_words=init_words, **kw)
    except ValueError as exc:
        raise ConfigError(f"[concept.{cid}] {exc}") from exc


def load_run_config(path=None) -> RunConfig:
    """Read ``path`` (or return the defaults when it is None)."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path):
        raise ConfigError(f"cannot read config {path}")
    root = Path(path).resolve().parent
    updates = {}
    if parser.has_section("paths"):
        sec = parser["paths"]
        for key in ("store", "out", "base"):
            if key in sec:
                p = Path(sec[key])
                updates[key] = p if p.is_absolute() else root / p
    if parser.has_section("model"):
        updates["model"] = model_config_from_section(parser["model"])
    if parser.has_section("train"):
        updates["train"] = _dataclass_section(TrainConfig, cfg.train, parser["train"])
    if parser.has_section("guidance"):
        updates["guidance"] = _dataclass_section(GuidanceConfig, cfg.guidance, parser["guidance"])
    if parser.has_section("eval"):
        updates["samples"] = parser["eval"].getint("samples", cfg.samples)
    if parser.has_section("tasks"):
        preset = parser["tasks"].get("preset", "toy3").strip()
        if preset not in PRESETS:
            raise ConfigError(f"unknown task preset {preset!r}; choose from {sorted(PRESETS)}")
        updates["tasks"] = tuple(tuple(g) for g in PRESETS[preset])
    concepts = [s for s in parser.sections() if s.startswith("concept.")]
    if concepts:
        groups: dict[int, list] = {}
        for name in concepts:
            task, spec = _concept_section(name[len("concept."):], parser[name])
            groups.setdefault(task, []).append(spec)
        if sorted(groups) != list(range(1, len(groups) + 1)):
            raise ConfigError(f"concept tasks must number 1..n without gaps, got {sorted(groups)}")
        updates["tasks"] = tuple(tuple(groups[i]) for i in sorted(groups))
    cfg = replace(cfg, **updates)
    seed = parser.getint("run", "seed", fallback=None) if parser.has_section("run") else None
    return cfg.with_seed(cfg.seed if seed is None else seed)
