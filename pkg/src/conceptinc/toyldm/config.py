"""Model configuration and its key/value file format.

The file is INI-style (``configparser``); the ``[model]`` section holds::

    layers = 4            # L, transformer layers
    dim = 16              # d, token feature width
    max_tokens = 8        # n_e, prompt length
    height = 8            # latent grid h
    width = 8             # latent grid w
    channels = 4          # d_z, latent channels
    timesteps = 100       # T
    beta_start = 1e-4
    beta_end = 0.1
    mlp_hidden = 64
    time_hidden = 1024    # width of the per-layer time-modulation MLP
    pretrain_steps = 4000
    seed = 0
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass

from ..errors import ConfigError

# bump whenever the denoiser's parameterization or forward pass changes
LAYOUT_REVISION = 5

# longest pretraining caption: "a <size> <color> blob at <position>"
MIN_PROMPT_TOKENS = 6


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    dim: int = 16
    max_tokens: int = 8
    height: int = 8
    width: int = 8
    channels: int = 4
    timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.1
    mlp_hidden: int = 64
    time_hidden: int = 1024
    pretrain_steps: int = 4000
    pretrain_batch: int = 16
    pretrain_lr: float = 6e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("layers", "dim", "max_tokens", "height", "width", "channels", "mlp_hidden",
                     "time_hidden", "pretrain_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.max_tokens < MIN_PROMPT_TOKENS:
            raise ConfigError(f"max_tokens must be >= {MIN_PROMPT_TOKENS} to hold the pretraining captions")
        if self.timesteps < 2:
            raise ConfigError("timesteps must be >= 2")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Short hash of the settings and the denoiser layout revision."""
        blob = json.dumps({**self.to_dict(), "layout": LAYOUT_REVISION}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _coerce(cls, section: dict) -> dict:
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in section.items():
        if key not in kinds:
            raise ConfigError(f"unknown key {key!r} in [{cls.__name__}]")
        kind = kinds[key]
        try:
            out[key] = int(raw) if kind in (int, "int") else float(raw) if kind in (float, "float") else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return out


def model_config_from_section(section) -> ModelConfig:
    return ModelConfig(**_coerce(ModelConfig, dict(section)))


def load_model_config(path) -> ModelConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path):
        raise ConfigError(f"cannot read config {path}")
    return model_config_from_section(parser["model"]) if parser.has_section("model") else ModelConfig()
