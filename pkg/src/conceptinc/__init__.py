"""Continual customization of a toy latent diffusion model with per-task LoRA learners."""

__version__ = "0.1.0"
