"""The frozen toy model bundle: config, vocabulary, schedule and base weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .. import numkit as nk
from ..errors import IntegrityError
from .config import ModelConfig
from .denoiser import DenoiserWeights
from .schedule import NoiseSchedule, make_schedule
from .text import Vocabulary

log = logging.getLogger(__name__)


@dataclass
class ToyModel:
    cfg: ModelConfig
    vocab: Vocabulary
    sched: NoiseSchedule
    weights: DenoiserWeights


def save_weights(weights: DenoiserWeights, path) -> int:
    from ..adapters.fileformat import write_container

    meta = {"kind": "base-weights", "config_hash": weights.cfg.digest()}
    return write_container(path, meta, weights.params)


def load_weights(cfg: ModelConfig, path) -> DenoiserWeights:
    from ..adapters.fileformat import read_container

    meta, tensors = read_container(path)
    if meta.get("kind") != "base-weights":
        raise IntegrityError(f"{path} does not hold base weights", "kind")
    if meta.get("config_hash") != cfg.digest():
        raise IntegrityError(f"{path} was trained for config {meta.get('config_hash')}", "config_hash")
    return DenoiserWeights(cfg, tensors).freeze()


def build_model(cfg: ModelConfig | None = None, base_path=None, progress=None) -> ToyModel:
    """Assemble the model, pretraining the base unless ``base_path`` already holds it.

    A freshly pretrained base is rounded to stored precision and written to
    ``base_path`` (when given), so in-memory and reloaded weights are identical.
    """
    from ..adapters.fileformat import to_stored_precision
    from .pretrain import pretrain_base

    cfg = cfg or ModelConfig()
    rng = nk.Rng(cfg.seed)
    vocab = Vocabulary(cfg.dim, rng)
    sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    if base_path is not None and Path(base_path).exists():
        weights = load_weights(cfg, base_path)
    else:
        log.info("pretraining base denoiser for %d steps", cfg.pretrain_steps)
        trained = pretrain_base(cfg, vocab, sched, rng, progress=progress)
        weights = DenoiserWeights(cfg, {k: to_stored_precision(v) for k, v in trained.params.items()}).freeze()
        if base_path is not None:
            Path(base_path).parent.mkdir(parents=True, exist_ok=True)
            save_weights(weights, base_path)
    return ToyModel(cfg, vocab, sched, weights)
