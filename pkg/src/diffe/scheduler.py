"""Fixed-variance diffusion schedule and the closed-form forward corruption."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables indexed by ``t - 1`` for t in 1..T."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise IndexError(f"timestep outside [1, {self.T}]: {t}")
        return self.alpha_bars[t - 1]


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
                   kind: str = "linear") -> NoiseSchedule:
    if kind != "linear":
        raise ConfigError(f"unknown schedule kind {kind!r}")
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(T, betas, alphas, alpha_bars)


def forward_sample(x0: Tensor, t, noise: Tensor, schedule: NoiseSchedule) -> Tensor:
    """Draw x_t ~ q(x_t | x_0) by reparameterization with caller-supplied noise.

    ``t`` is either a scalar step or one step per leading-axis sample.
    """
    x0d = x0.data if isinstance(x0, Tensor) else np.asarray(x0, dtype=np.float64)
    nd = noise.data if isinstance(noise, Tensor) else np.asarray(noise, dtype=np.float64)
    if x0d.shape != nd.shape:
        raise DimensionError(f"noise shape {nd.shape} != x0 shape {x0d.shape}")
    ab = schedule.alpha_bar(t)
    if ab.ndim == 1:
        if ab.shape[0] != x0d.shape[0]:
            raise DimensionError("need one timestep per sample")
        ab = ab.reshape((-1,) + (1,) * (x0d.ndim - 1))
    return Tensor(np.sqrt(ab) * x0d + np.sqrt(1.0 - ab) * nd)


def sample_timestep(rng: np.random.Generator, T: int, size=None):
    """Uniform integer(s) on {1, ..., T}."""
    draw = rng.integers(1, T + 1, size=size)
    return int(draw) if size is None else draw
