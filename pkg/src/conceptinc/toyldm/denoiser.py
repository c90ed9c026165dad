"""Small transformer noise predictor with per-layer cross-attention.

The latent grid is flattened into ``h*w`` spatial tokens. Each layer applies
time-modulated self-attention, cross-attention to that layer's prompt rows,
and a time-modulated MLP, all residual with normalized inputs. LoRA deltas, when given, are added to
the cross-attention query/key/value/output projections.
"""

from __future__ import annotations

import numpy as np

from .. import numkit as nk
from ..errors import AdapterError
from .config import ModelConfig
from .schedule import make_schedule
from .text import PromptEmbedding

PROJECTIONS = ("q", "k", "v", "o")
TIME_FEATURES = 16
SIGNAL_VARIANCE = 0.1


def adapted_name(layer: int, proj: str) -> str:
    return f"l{layer}.ca.{proj}"


class DenoiserWeights:
    """Named base parameters; arrays are read-only once :meth:`freeze` runs."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = dict(params)

    def __getitem__(self, name):
        return self.params[name]

    def names(self) -> list[str]:
        return sorted(self.params)

    def freeze(self) -> "DenoiserWeights":
        for arr in self.params.values():
            arr.setflags(write=False)
        return self

    def n_params(self) -> int:
        return sum(a.size for a in self.params.values())

    def adapted_shapes(self) -> dict[tuple[int, str], tuple[int, int]]:
        return {(l, p): self.params[adapted_name(l, p)].shape
                for l in range(self.cfg.layers) for p in PROJECTIONS}


def init_weights(cfg: ModelConfig, rng: nk.Rng) -> DenoiserWeights:
    rng = rng.child("denoiser-init")
    d, dz, hid, th = cfg.dim, cfg.channels, cfg.mlp_hidden, cfg.time_hidden
    resid = 1.0 / np.sqrt(2.0 * cfg.layers)

    def lin(name, fan_in, fan_out, scale=1.0):
        return rng.child(name).normal((fan_in, fan_out), std=scale / np.sqrt(fan_in))

    p = {
        "in_proj": lin("in_proj", dz, d),
        "pos": rng.child("pos").normal((cfg.n_pixels, d), std=0.5),
        "time_proj": lin("time_proj", TIME_FEATURES, d),
        "null": rng.child("null").normal((1, d), std=1.0 / np.sqrt(d)),
        "out_proj": lin("out_proj", d, dz),
    }
    for l in range(cfg.layers):
        p[f"l{l}.mod.w1"] = lin(f"l{l}.mod.w1", TIME_FEATURES, th)
        p[f"l{l}.mod.b1"] = np.zeros(th)
        p[f"l{l}.mod.w2"] = lin(f"l{l}.mod.w2", th, 4 * d, scale=0.1)
        for kind in ("sa", "ca"):
            for proj in PROJECTIONS:
                p[f"l{l}.{kind}.{proj}"] = lin(f"l{l}.{kind}.{proj}", d, d, resid if proj == "o" else 1.0)
        p[f"l{l}.mlp.w1"] = lin(f"l{l}.mlp.w1", d, hid)
        p[f"l{l}.mlp.w2"] = lin(f"l{l}.mlp.w2", hid, d, resid)
    return DenoiserWeights(cfg, p)


def time_features(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = TIME_FEATURES // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _effective(weights, params, layer, proj, deltas):
    base = params[adapted_name(layer, proj)]
    if deltas is None:
        return base
    delta = deltas.get((layer, proj))
    if delta is None:
        return base
    if nk.value_of(delta).shape != base.shape:
        raise AdapterError(f"delta for layer {layer} {proj} has shape {nk.value_of(delta).shape}, "
                           f"expected {base.shape}")
    return nk.add(base, delta)


def _preconditioning(cfg: ModelConfig, t, B: int):
    """Skip and output gains for the noise estimate ``skip * z_t + gain * net``.

    ``skip`` is the least-squares noise estimate from ``z_t`` alone for data of
    variance ``SIGNAL_VARIANCE``; ``gain`` is the spread left over, so the
    network's target has unit scale at every timestep.
    """
    sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    ts = np.atleast_1d(np.asarray(t, dtype=int))
    ab = sched.alpha_bar[ts - 1]
    if ab.shape[0] == 1 and B > 1:
        ab = np.repeat(ab, B)
    total = ab * SIGNAL_VARIANCE + (1.0 - ab)
    skip = np.sqrt(1.0 - ab) / total
    gain = np.sqrt(ab * SIGNAL_VARIANCE / total)
    return skip[:, None, None, None], gain[:, None, None, None]


def _key_bias(length, n_e: int) -> np.ndarray:
    lengths = np.atleast_1d(np.asarray(length))
    bias = np.where(np.arange(n_e)[None, :] < lengths[:, None], 0.0, -1e30)
    return bias[0] if np.ndim(length) == 0 else bias[:, None, :]


def denoiser_forward(z_t, t, cond: PromptEmbedding | None, weights: DenoiserWeights, deltas=None,
                     params=None, feature_hook=None):
    """Noise estimate for ``z_t`` at timestep(s) ``t``.

    ``z_t`` is ``[B, h, w, d_z]`` (or unbatched ``[h, w, d_z]``). ``cond=None``
    selects the unconditional branch, which attends to a single null token.
    ``params`` overrides base parameters with recorded nodes (pretraining).
    ``feature_hook(layer, feature_map, w_q, w_k, w_v)`` may rewrite the
    cross-attention feature map ``[B, h, w, d]`` before the output projection.
    """
    cfg = weights.cfg
    P = weights.params if params is None else params
    unbatched = nk.value_of(z_t).ndim == 3
    if unbatched:
        z_t = nk.reshape(z_t, (1,) + nk.value_of(z_t).shape)
    B = nk.value_of(z_t).shape[0]
    d, N = cfg.dim, cfg.n_pixels
    scale = 1.0 / np.sqrt(d)
    tf = time_features(t)
    if tf.shape[0] == 1 and B > 1:
        tf = np.repeat(tf, B, axis=0)

    x = nk.matmul(nk.reshape(z_t, (B, N, cfg.channels)), P["in_proj"])
    x = nk.add(nk.add(x, P["pos"]), nk.reshape(nk.matmul(tf, P["time_proj"]), (B, 1, d)))

    if cond is None:
        keys_in, bias, length = P["null"], None, 1
    else:
        length = cond.length
        bias = _key_bias(length, cfg.max_tokens)

    for l in range(cfg.layers):
        mod = nk.matmul(nk.silu(nk.add(nk.matmul(tf, P[f"l{l}.mod.w1"]), P[f"l{l}.mod.b1"])), P[f"l{l}.mod.w2"])
        mod = nk.reshape(mod, (B, 1, 4 * d))
        g1, b1 = nk.take(mod, (slice(None), slice(None), slice(0, d))), nk.take(mod, (slice(None), slice(None), slice(d, 2 * d)))
        g2, b2 = nk.take(mod, (slice(None), slice(None), slice(2 * d, 3 * d))), nk.take(mod, (slice(None), slice(None), slice(3 * d, 4 * d)))

        xn = nk.layer_norm(x)
        h = nk.add(nk.add(xn, nk.mul(xn, g1)), b1)
        q = nk.matmul(h, P[f"l{l}.sa.q"])
        k = nk.matmul(h, P[f"l{l}.sa.k"])
        v = nk.matmul(h, P[f"l{l}.sa.v"])
        att = nk.softmax(nk.mul(nk.matmul(q, nk.swapaxes(k, 1, 2)), scale))
        x = nk.add(x, nk.matmul(nk.matmul(att, v), P[f"l{l}.sa.o"]))

        wq = _effective(weights, P, l, "q", deltas)
        wk = _effective(weights, P, l, "k", deltas)
        wv = _effective(weights, P, l, "v", deltas)
        wo = _effective(weights, P, l, "o", deltas)
        ctx = keys_in if cond is None else cond.per_layer[l]
        qc = nk.matmul(nk.add(nk.layer_norm(x), P["pos"]), wq)
        kc = nk.matmul(ctx, wk)
        vc = nk.matmul(ctx, wv)
        kt = nk.swapaxes(kc, -1, -2) if nk.value_of(kc).ndim == 3 else nk.transpose(kc)
        scores = nk.mul(nk.matmul(qc, kt), scale)
        if bias is not None:
            scores = nk.add(scores, bias)
        f = nk.matmul(nk.softmax(scores), vc)
        if feature_hook is not None:
            fmap = feature_hook(l, nk.reshape(f, (B, cfg.height, cfg.width, d)), wq, wk, wv)
            f = nk.reshape(fmap, (B, N, d))
        x = nk.add(x, nk.matmul(f, wo))

        xn = nk.layer_norm(x)
        h = nk.add(nk.add(xn, nk.mul(xn, g2)), b2)
        x = nk.add(x, nk.matmul(nk.silu(nk.matmul(h, P[f"l{l}.mlp.w1"])), P[f"l{l}.mlp.w2"]))

    skip, scale_out = _preconditioning(cfg, t, B)
    resid = nk.reshape(nk.matmul(x, P["out_proj"]), (B, cfg.height, cfg.width, cfg.channels))
    out = nk.add(nk.mul(skip, z_t), nk.mul(scale_out, resid))
    if unbatched:
        out = nk.reshape(out, (cfg.height, cfg.width, cfg.channels))
    return out
