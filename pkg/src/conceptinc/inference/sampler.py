"""Guided ancestral sampling with optional region conditions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from .. import numkit as nk
from ..adapters.store import LearnerStore
from ..errors import ConfigError
from ..toyldm.denoiser import denoiser_forward
from ..toyldm.model import ToyModel
from ..toyldm.schedule import NoiseSchedule
from ..toyldm.text import PromptSpec, encode_prompt
from .merge import MergeReport, ewa_merge
from .regions import ATTENTION_KINDS, RegionCondition, apply_regions, region_mask, regional_cross_attention

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 7.5
    alpha: float = 0.1
    steps: int | None = None  # None samples every training timestep
    seed: int = 0
    attention: str = "sigmoid"

    def __post_init__(self):
        if not self.scale >= 0:
            raise ConfigError("guidance scale must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("sampler needs at least one step")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class SampleResult:
    latent: np.ndarray
    report: MergeReport | None
    notes: list[str]


def guided(uncond, cond, scale: float):
    """``uncond + scale * (cond - uncond)``."""
    return uncond + scale * (cond - uncond)


def region_noise_estimate(uncond, cond_region, scale: float):
    """Guided estimate of one region; both branches are precomputed denoiser outputs."""
    if not scale >= 0:
        raise ValueError("guidance scale must be non-negative")
    return guided(uncond, cond_region, scale)


def aggregate_noise(E, region_estimates, alpha: float):
    """``alpha * E + sum_u (1 - alpha) * E_u * m_u``, term by term as written."""
    out = alpha * np.asarray(E)
    for E_u, mask in region_estimates:
        m = np.asarray(mask)
        if m.ndim == 2:
            m = m[:, :, None]
        out = out + (1.0 - alpha) * np.asarray(E_u) * m
    return out


def _region_hook(model: ToyModel, emb, box, attention: str):
    def hook(layer, fmap, wq, wk, wv):
        rows = emb.per_layer[layer]
        feats = []
        for b in range(fmap.shape[0]):
            feat = regional_cross_attention(fmap[b], rows, box, wq, wk, wv, attention, emb.length)
            feats.append(apply_regions(fmap[b], [(box, feat)]))
        return np.stack(feats)
    return hook


def timestep_grid(T: int, steps: int | None) -> np.ndarray:
    """Descending 1-based timesteps, evenly respaced when ``steps < T``."""
    if steps is None or steps >= T:
        return np.arange(T, 0, -1)
    return np.unique(np.linspace(1, T, steps).round().astype(int))[::-1]


def ancestral_step(z, eps_hat, t: int, t_prev: int, sched: NoiseSchedule, noise):
    """One DDPM posterior step from ``t`` to ``t_prev`` (0 ends the chain, adding no noise)."""
    ab_t, ab_prev = sched.ab(t), sched.ab(t_prev)
    alpha = ab_t / ab_prev
    beta = 1.0 - alpha
    mean = (z - beta / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(alpha)
    if t_prev == 0:
        return mean
    var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
    return mean + np.sqrt(var) * noise


def sample(model: ToyModel, prompt: PromptSpec, regions: list[RegionCondition], store: LearnerStore,
           cfg: GuidanceConfig | None = None, *, deltas=None, n: int = 1) -> SampleResult:
    """Draw ``n`` latents for ``prompt``.

    Store deltas are merged for the prompt unless ``deltas`` is given, in
    which case those exact weights are used. With no regions the guided
    estimate drives the sampler directly; with regions it is combined with
    the region estimates by :func:`aggregate_noise`.
    """
    cfg = cfg or GuidanceConfig()
    mc, sched = model.cfg, model.sched
    for r in regions:
        r.check(mc.height, mc.width)
    concept_rows = store.concept_store()
    report = None
    if deltas is None:
        deltas, report = ewa_merge(model, store, prompt)
    emb = encode_prompt(prompt, model.vocab, concept_rows, mc.layers, mc.max_tokens)
    region_embs = [encode_prompt(r.prompt, model.vocab, concept_rows, mc.layers, mc.max_tokens) for r in regions]
    masks = [region_mask(r.box, mc.height, mc.width) for r in regions]
    notes = []
    if regions:
        cover = np.clip(np.sum(masks, axis=0), 0, 1).mean()
        if cover < 1.0:
            notes.append(f"region coverage {cover:.4f} < 1: uncovered pixels carry only alpha times the global estimate")

    rng = nk.Rng(cfg.seed).child("sample")
    z = rng.child("initial").normal((n, mc.height, mc.width, mc.channels))
    noise_rng = rng.child("noise")
    grid = timestep_grid(sched.T, cfg.steps)
    W = model.weights
    for i, t in enumerate(grid):
        t = int(t)
        t_prev = int(grid[i + 1]) if i + 1 < len(grid) else 0
        uncond = denoiser_forward(z, t, None, W, deltas)
        E = guided(uncond, denoiser_forward(z, t, emb, W, deltas), cfg.scale)
        if regions:
            ests = []
            for r, remb, m in zip(regions, region_embs, masks):
                cond_u = denoiser_forward(z, t, emb, W, deltas,
                                          feature_hook=_region_hook(model, remb, r.box, cfg.attention))
                ests.append((region_noise_estimate(uncond, cond_u, cfg.scale), m))
            E = aggregate_noise(E, ests, cfg.alpha)
        noise = noise_rng.normal(z.shape) if t_prev > 0 else None
        z = ancestral_step(z, E, t, t_prev, sched, noise)
        nk.check_finite(z, f"latent at timestep {t}")
    return SampleResult(z, report, notes)
