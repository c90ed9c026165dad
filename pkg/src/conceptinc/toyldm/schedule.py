from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule; timesteps are 1-based (``beta[t-1]`` belongs to ``t``)."""

    beta: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def ab(self, t: int) -> float:
        """Cumulative product at ``t``; ``ab(0) == 1``."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_schedule(T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.1) -> NoiseSchedule:
    if T < 2:
        raise ConfigError("schedule needs T >= 2")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T)
    return NoiseSchedule(beta=beta, alpha_bar=np.cumprod(1.0 - beta))


def add_noise(z0, eps, t: int, sched: NoiseSchedule):
    """Closed-form forward diffusion ``sqrt(ab_t) z0 + sqrt(1 - ab_t) eps``."""
    if not 1 <= t <= sched.T:
        raise IndexError(f"timestep {t} outside 1..{sched.T}")
    z0, eps = np.asarray(z0), np.asarray(eps)
    if z0.shape != eps.shape:
        raise ValueError(f"latent shapes differ: {z0.shape} vs {eps.shape}")
    ab = sched.ab(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
