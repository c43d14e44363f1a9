"""Noise schedules, forward/reverse diffusion steps, guidance, and sampling.

Step indices run 1..T; index 0 is the clean-data convention (alpha_bar[0]=1)
used for the final deterministic hop. Step functions accept numpy arrays or
torch tensors; the sampling loop itself is torch-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError
from .rng import generator


@dataclass
class NoiseSchedule:
    """Tabulated beta / alpha / alpha_bar, each of length T+1 (index 0 unused
    for beta; alpha_bar[0] = 1 by convention)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (len(self.beta) == len(self.alpha) == len(self.alpha_bar) == self.T + 1):
            raise ValidationError("schedule tables must have length T+1")
        b = self.beta[1:]
        if b.size and (b.min() <= 0 or b.max() >= 1):
            raise ValidationError("beta values must lie strictly in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValidationError("beta must be non-decreasing")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValidationError("alpha_bar must be strictly decreasing")


def linear_schedule(T: int, beta_1: float = 1e-4, beta_T: float = 0.02) -> NoiseSchedule:
    """Linearly interpolated variance schedule with tabulated products."""
    if T < 1:
        raise ValidationError("T must be >= 1")
    if not 0 < beta_1 <= beta_T < 1:
        raise ValidationError("need 0 < beta_1 <= beta_T < 1")
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_1, beta_T, T)
    alpha = np.ones(T + 1)
    alpha[1:] = 1.0 - beta[1:]
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T, beta, alpha, alpha_bar)


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if not 1 <= t <= sched.T:
        raise ValidationError(f"step index {t} outside [1, {sched.T}]")


def q_sample(x0, t, eps, sched: NoiseSchedule):
    """Closed-form forward noising: sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps.

    t may be an int (shared step) or a 1-D integer tensor of per-sample
    steps when x0 is a batched torch tensor.
    """
    if x0.shape != eps.shape:
        raise ValidationError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    if isinstance(t, (int, np.integer)):
        _check_t(int(t), sched)
        ab = float(sched.alpha_bar[int(t)])
        return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
    t = torch.as_tensor(t, dtype=torch.long)
    if t.min() < 1 or t.max() > sched.T:
        raise ValidationError("per-sample step indices outside [1, T]")
    ab = torch.from_numpy(sched.alpha_bar).to(x0.dtype)[t]
    shape = (-1,) + (1,) * (x0.ndim - 1)
    return ab.sqrt().reshape(shape) * x0 + (1.0 - ab).sqrt().reshape(shape) * eps


def cfg_combine(eps_cond, eps_uncond, w: float):
    """Guided noise estimate (1+w)*eps_cond - w*eps_uncond.

    w == 0 short-circuits to eps_cond so the identity holds bit-for-bit.
    """
    if eps_cond.shape != eps_uncond.shape:
        raise ValidationError(
            f"shape mismatch: {eps_cond.shape} vs {eps_uncond.shape}"
        )
    if w < 0:
        raise ValidationError("guidance weight w must be >= 0")
    if w == 0:
        return eps_cond
    return (1.0 + w) * eps_cond - w * eps_uncond


def ddpm_step(x_t, eps_pred, t: int, sched: NoiseSchedule, noise):
    """One stochastic reverse step; the injected noise is forced to 0 at t=1.

    Mean is the epsilon-parameterized posterior mean and the variance is the
    fixed choice sigma_t^2 = beta_t.
    """
    if x_t.shape != eps_pred.shape:
        raise ValidationError("x_t and eps_pred shapes differ")
    _check_t(t, sched)
    beta = float(sched.beta[t])
    ab = float(sched.alpha_bar[t])
    mu = (x_t - (beta / math.sqrt(1.0 - ab)) * eps_pred) / math.sqrt(
        float(sched.alpha[t])
    )
    if t == 1:
        return mu
    if noise.shape != x_t.shape:
        raise ValidationError("noise shape differs from x_t")
    return mu + math.sqrt(beta) * noise


def ddim_step(x_t, eps_pred, t: int, t_prev: int, sched: NoiseSchedule):
    """Deterministic (eta = 0) reverse hop from step t to t_prev < t."""
    if x_t.shape != eps_pred.shape:
        raise ValidationError("x_t and eps_pred shapes differ")
    _check_t(t, sched)
    if not 0 <= t_prev < t:
        raise ValidationError(f"need 0 <= t_prev < t, got {t_prev} >= {t}")
    ab_t = float(sched.alpha_bar[t])
    ab_prev = float(sched.alpha_bar[t_prev])
    x0_pred = (x_t - math.sqrt(1.0 - ab_t) * eps_pred) / math.sqrt(ab_t)
    return math.sqrt(ab_prev) * x0_pred + math.sqrt(1.0 - ab_prev) * eps_pred


def ddim_grid(T: int, steps: int) -> list[int]:
    """Evenly spaced subset of [1, T] of the given size, descending."""
    if not 1 <= steps <= T:
        raise ValidationError(f"ddim_steps must lie in [1, T], got {steps}")
    if steps == 1:
        return [T]
    grid = [1 + (i * (T - 1)) // (steps - 1) for i in range(steps)]
    return grid[::-1]


@dataclass
class SamplerConfig:
    kind: str = "ddim"  # "ddpm" | "ddim"
    ddim_steps: int = 50
    guidance_w: float = 1.0  # guidance scale = w + 1
    seed: int = 0
    batch_size: int = 8

    def __post_init__(self):
        if self.kind not in ("ddpm", "ddim"):
            raise ValidationError(f"unknown sampler kind {self.kind!r}")
        if self.guidance_w < 0:
            raise ValidationError("guidance_w must be >= 0")
        if self.ddim_steps < 1:
            raise ValidationError("ddim_steps must be >= 1")

    @property
    def guidance_scale(self) -> float:
        return self.guidance_w + 1.0


def step_grid(sched: NoiseSchedule, cfg: SamplerConfig) -> list[int]:
    """Descending step indices the sampler will visit."""
    if cfg.kind == "ddim":
        if cfg.ddim_steps > sched.T:
            raise ValidationError("ddim_steps cannot exceed T")
        return ddim_grid(sched.T, cfg.ddim_steps)
    return list(range(sched.T, 0, -1))


def _noise(seed: int, context: tuple, shape, dtype) -> torch.Tensor:
    arr = generator(seed, *context).standard_normal(tuple(shape))
    return torch.from_numpy(arr).to(dtype)


@torch.no_grad()
def guided_eps(model, x, t: int, cond, w: float) -> torch.Tensor:
    """Conditional + null forward passes combined per the guidance rule.

    With cond=None the model is evaluated once with the null condition and
    the condition tensor is never read.
    """
    batch_t = torch.full((x.shape[0],), t, dtype=torch.long)
    if cond is None:
        return model(x, batch_t, None).eps
    eps_cond = model(x, batch_t, cond).eps
    eps_uncond = model(x, batch_t, None).eps
    return cfg_combine(eps_cond, eps_uncond, w)


@torch.no_grad()
def reverse_from(
    model,
    x: torch.Tensor,
    cond,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    grid: list[int],
    noise_context: tuple = (),
) -> torch.Tensor:
    """Run the reverse chain from the state x at grid[0] down to step 0."""
    for i, t in enumerate(grid):
        eps = guided_eps(model, x, t, cond, cfg.guidance_w)
        if cfg.kind == "ddim":
            t_prev = grid[i + 1] if i + 1 < len(grid) else 0
            x = ddim_step(x, eps, t, t_prev, sched)
        else:
            z = _noise(cfg.seed, noise_context + ("z", t), x.shape, x.dtype)
            x = ddpm_step(x, eps, t, sched, z)
    return x


@torch.no_grad()
def sample(
    model,
    cond: torch.Tensor | None,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    shape: tuple[int, ...],
    noise_context: tuple = (),
) -> torch.Tensor:
    """Generate x_0 from unit-Gaussian x_T under optional semantic guidance.

    shape is (B, 2, H, W); cond, when given, must be (B, K, H, W). All
    randomness comes from (cfg.seed, noise_context), so repeated calls are
    byte-identical.
    """
    if cond is not None and (cond.ndim != 4 or cond.shape[0] != shape[0]):
        raise ValidationError("cond must be (B, K, H, W) matching the batch")
    dtype = next(model.parameters()).dtype
    x = _noise(cfg.seed, noise_context + ("init",), shape, dtype)
    if cond is not None:
        cond = cond.to(dtype)
    return reverse_from(model, x, cond, sched, cfg, step_grid(sched, cfg), noise_context)
