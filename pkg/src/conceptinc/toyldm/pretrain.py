"""Fits the frozen base denoiser on the generic pattern distribution.

This stands in for a pretrained latent diffusion model: afterwards the base
can render vocabulary-described blobs and stripes, and its weights never
change again.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .. import numkit as nk
from .config import ModelConfig
from .denoiser import DenoiserWeights, denoiser_forward, init_weights
from .patterns import random_pretrain_sample
from .schedule import NoiseSchedule
from .text import PromptEmbedding, Vocabulary

log = logging.getLogger(__name__)

NULL_DROPOUT = 0.1


def pretrain_batch(cfg: ModelConfig, vocab: Vocabulary, sched: NoiseSchedule, rng: nk.Rng, size: int):
    latents, ctx, lengths = [], np.zeros((size, cfg.max_tokens, cfg.dim)), np.zeros(size, dtype=int)
    null_sel = np.zeros((size, cfg.max_tokens, 1))
    for b in range(size):
        z0, prompt = random_pretrain_sample(rng, cfg.height, cfg.width)
        latents.append(z0)
        if rng.uniform() < NULL_DROPOUT:
            null_sel[b, 0, 0] = 1.0
            lengths[b] = 1
        else:
            ctx[b, : len(prompt.tokens)] = [vocab.row(w) for w in prompt.tokens]
            lengths[b] = len(prompt.tokens)
    z0 = np.stack(latents)
    ts = rng.integers(1, sched.T + 1, size=size)
    eps = rng.normal(z0.shape)
    ab = sched.alpha_bar[ts - 1][:, None, None, None]
    z_t = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
    return z_t, ts, eps, ctx, null_sel, lengths


def pretrain_loss(weights, leaves, batch):
    z_t, ts, eps, ctx, null_sel, lengths = batch
    mixed = nk.add(nk.mul(null_sel, leaves["null"]), ctx)
    cond = PromptEmbedding([mixed] * weights.cfg.layers, lengths)
    pred = denoiser_forward(z_t, ts, cond, weights, params=leaves)
    return nk.mean(nk.square(nk.sub(pred, eps)))


def pretrain_base(cfg: ModelConfig, vocab: Vocabulary, sched: NoiseSchedule, rng: nk.Rng,
                  steps: int | None = None, progress=None) -> DenoiserWeights:
    steps = cfg.pretrain_steps if steps is None else steps
    weights = init_weights(cfg, rng)
    names = weights.names()
    arrays = [weights.params[n].copy() for n in names]
    weights = DenoiserWeights(cfg, dict(zip(names, arrays)))
    opt = nk.Adam(arrays, cfg.pretrain_lr)
    data_rng = rng.child("pretrain-data")
    warm = max(1, steps // 20)
    for step in range(1, steps + 1):
        frac = step / warm if step <= warm else 0.55 + 0.45 * math.cos(math.pi * (step - warm) / max(1, steps - warm))
        opt.lr = [cfg.pretrain_lr * min(1.0, frac)] * len(arrays)
        batch = pretrain_batch(cfg, vocab, sched, data_rng, cfg.pretrain_batch)
        leaves = {n: nk.param(a) for n, a in zip(names, arrays)}
        loss = pretrain_loss(weights, leaves, batch)
        grads = nk.grad(loss, [leaves[n] for n in names])
        nk.check_finite(nk.value_of(loss), "pretraining loss")
        opt.step(grads)
        if progress is not None:
            progress(step, float(nk.value_of(loss)))
        if step % 500 == 0:
            log.info("pretrain step %d loss %.5f", step, float(nk.value_of(loss)))
    return weights.freeze()
