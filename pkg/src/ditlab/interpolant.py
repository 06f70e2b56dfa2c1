"""Linear-interpolant corruption, velocity denoising loss, and samplers.

The corruption path is x_t = (1-t) x0 + t eps with t=0 at data and t=1 at
noise; the matching velocity target is eps - x0. Sampling integrates the
learned field backwards from t=1 on a uniform grid. Both samplers share one
integrator core: the ODE sampler is the SDE sampler with zero diffusion and
terminal cutoff 1/nfes (which makes its grid exactly uniform), so the
degenerate-diffusion equivalence holds bit-for-bit by construction.

The SDE uses diffusion coefficient g(t) = t and the score identity
s = -(x_t + (1-t) v) / t; the noise term is sqrt(g dt) xi per step, active
until the terminal cutoff t_min, after which one deterministic Euler step
lands on t=0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ndgrad as ng
from .errors import ConfigError, DomainError, NumericError
from .ndgrad import Array, Node, Rng


@dataclass(frozen=True)
class DiffusionBatch:
    x0: Array      # [B, H, W, 1] clean images in [-1, 1]
    eps: Array     # [B, H, W, 1] standard normal
    t: Array       # [B] strictly inside (0, 1)
    labels: np.ndarray  # [B] ints in 0..C (C = null)

    def __post_init__(self):
        if np.any(self.t <= 0.0) or np.any(self.t >= 1.0):
            raise DomainError("batch t must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class SamplerConfig:
    nfes: int = 50
    kind: str = "ode"             # "ode" | "sde"
    cfg_scale: float = 1.0
    guidance_lo: float = 0.0
    guidance_hi: float = 1.0
    t_min: float = 0.04           # SDE terminal cutoff (score ~ 1/t)
    noise_scale: float = 1.0      # 0 degenerates the SDE to the ODE path
    seed: int = 0

    def __post_init__(self):
        if self.nfes < 1:
            raise ConfigError("nfes must be >= 1")
        if self.kind not in ("ode", "sde"):
            raise ConfigError(f"unknown sampler kind {self.kind!r}")
        if self.cfg_scale < 1.0:
            raise ConfigError("cfg_scale must be >= 1")
        if not self.guidance_lo <= self.guidance_hi:
            raise ConfigError("guidance interval must satisfy lo <= hi")
        if not 0.0 < self.t_min < 1.0:
            raise ConfigError("t_min must be in (0, 1)")


T_FLOOR = 1e-3  # training-time t ~ Uniform(T_FLOOR, 1) avoids the degenerate t=0 draw


def corrupt(x0: Array, eps: Array, t: Array | float) -> Array:
    """x_t = (1-t) x0 + t eps, t broadcast per sample."""
    x0 = ng.as_f32(x0)
    eps = ng.as_f32(eps)
    tarr = np.asarray(t, np.float32)
    if np.any(tarr < 0.0) or np.any(tarr > 1.0):
        raise DomainError("corrupt: t outside [0, 1]")
    if x0.shape != eps.shape:
        raise DomainError(f"corrupt: x0 {x0.shape} vs eps {eps.shape}")
    tb = tarr.reshape((-1,) + (1,) * (x0.ndim - 1)) if tarr.ndim == 1 else tarr
    return ((1.0 - tb) * x0 + tb * eps).astype(np.float32)


def velocity_target(x0: Array, eps: Array) -> Array:
    """d/dt of corrupt at fixed (x0, eps): eps - x0."""
    x0 = ng.as_f32(x0)
    eps = ng.as_f32(eps)
    if x0.shape != eps.shape:
        raise DomainError(f"velocity_target: x0 {x0.shape} vs eps {eps.shape}")
    return (eps - x0).astype(np.float32)


def diffusion_loss(model, batch: DiffusionBatch) -> tuple[Node, "object"]:
    """Mean squared velocity error over batch and pixels; returns (loss, trace)."""
    x_t = corrupt(batch.x0, batch.eps, batch.t)
    v_pred, trace = model.forward(x_t, batch.t, batch.labels)
    target = ng.constant(velocity_target(batch.x0, batch.eps))
    diff = ng.sub(v_pred, target)
    loss = ng.mean_all(ng.mul(diff, diff))
    if not np.isfinite(loss.value):
        raise NumericError("non-finite diffusion loss")
    return loss, trace


VelocityFn = Callable[[Array, Array, np.ndarray], Array]


def cfg_velocity(model_fn: VelocityFn, x_t: Array, t: float, labels: np.ndarray,
                 cfg: SamplerConfig, null_label: int) -> Array:
    """Classifier-free-guided velocity, gated by the guidance interval."""
    tvec = np.full(x_t.shape[0], t, np.float32)
    v_cond = model_fn(x_t, tvec, labels)
    if cfg.cfg_scale == 1.0 or not (cfg.guidance_lo <= t <= cfg.guidance_hi):
        return v_cond
    null = np.full_like(labels, null_label)
    v_uncond = model_fn(x_t, tvec, null)
    return (v_uncond + np.float32(cfg.cfg_scale) * (v_cond - v_uncond)).astype(np.float32)


def _integrate(model_fn: VelocityFn, cfg: SamplerConfig, labels: np.ndarray,
               shape: tuple[int, ...], null_label: int, t_cut: float,
               g_fn: Callable[[float], float]) -> Array:
    """Shared reverse-time Euler / Euler-Maruyama core.

    nfes-1 steps move t from 1 to t_cut (noisy when g > 0), then one
    deterministic Euler step lands on t=0. Noise, when enabled, is
    sqrt(g(t) dt) per step from the chain's own stream.
    """
    rng = Rng(cfg.seed).split("sampler")
    x = rng.split("init").normal(shape)
    noise_rng = rng.split("walk")
    ts = np.linspace(1.0, t_cut, cfg.nfes, dtype=np.float64) if cfg.nfes > 1 else np.array([1.0])

    for i in range(cfg.nfes):
        t = float(ts[i])
        t_next = float(ts[i + 1]) if i + 1 < cfg.nfes else 0.0
        dt = t - t_next
        v = cfg_velocity(model_fn, x, t, labels, cfg, null_label)
        g = float(g_fn(t)) * (0.0 if i + 1 == cfg.nfes else 1.0)  # final step is deterministic
        if g > 0.0:
            score = -(x + np.float32(1.0 - t) * v) / np.float32(t)
            drift = v - np.float32(0.5 * g) * score
            x = x - np.float32(dt) * drift
            if cfg.noise_scale != 0.0:
                xi = noise_rng.normal(shape)
                x = x + np.float32(cfg.noise_scale * np.sqrt(g * dt)) * xi
        else:
            x = x - np.float32(dt) * v
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state at integration step {i} (t={t:.4f})")
    return x.astype(np.float32)


def sample_ode(model_fn: VelocityFn, cfg: SamplerConfig, labels: np.ndarray,
               image_size: int, null_label: int) -> Array:
    """Explicit Euler on dx/dt = v from t=1 to t=0 with uniform steps."""
    shape = (len(labels), image_size, image_size, 1)
    # cutting at 1/nfes keeps the grid uniform: the final deterministic step
    # has the same width as every other step
    return _integrate(model_fn, cfg, np.asarray(labels, np.int64), shape, null_label,
                      t_cut=1.0 / cfg.nfes, g_fn=lambda t: 0.0)


def sample_sde(model_fn: VelocityFn, cfg: SamplerConfig, labels: np.ndarray,
               image_size: int, null_label: int) -> Array:
    """Euler-Maruyama with g(t) = t down to t_min, then one Euler step to 0."""
    shape = (len(labels), image_size, image_size, 1)
    gscale = 1.0 if cfg.noise_scale != 0.0 else 0.0
    return _integrate(model_fn, cfg, np.asarray(labels, np.int64), shape, null_label,
                      t_cut=cfg.t_min, g_fn=lambda t: gscale * t)


def sample(model_fn: VelocityFn, cfg: SamplerConfig, labels: np.ndarray,
           image_size: int, null_label: int) -> Array:
    fn = sample_sde if cfg.kind == "sde" else sample_ode
    return fn(model_fn, cfg, labels, image_size, null_label)
