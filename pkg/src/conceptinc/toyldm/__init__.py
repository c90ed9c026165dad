"""Desk-scale latent diffusion substrate."""

from .config import ModelConfig, load_model_config
from .denoiser import PROJECTIONS, DenoiserWeights, denoiser_forward, init_weights
from .patterns import ConceptSpec, canonical_pattern, gen_concept_dataset
from .schedule import NoiseSchedule, add_noise, make_schedule
from .text import PromptEmbedding, PromptSpec, Vocabulary, encode_prompt

__all__ = [
    "PROJECTIONS", "ConceptSpec", "ToyModel", "build_model", "load_weights", "save_weights", "DenoiserWeights", "ModelConfig", "NoiseSchedule", "PromptEmbedding",
    "PromptSpec", "Vocabulary", "add_noise", "canonical_pattern", "denoiser_forward", "encode_prompt",
    "gen_concept_dataset", "init_weights", "load_model_config", "make_schedule",
]
from .model import ToyModel, build_model, load_weights, save_weights
