"""Diffusion time machinery: noise schedule, forward noising, deterministic
DDIM reverse steps, cascade noise injection, and cosine-decay detail blending.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_ops import as_f32


@dataclass(frozen=True)
class NoiseSchedule:
    total_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    ddim_timesteps: np.ndarray
    eta: float = 0.0

    def alpha_bar(self, t: int) -> float:
        """Cumulative alpha at timestep t; alpha_bar(0) is defined as 1."""
        if t < 0 or t > self.total_steps:
            raise ValueError(f"timestep {t} outside [0, {self.total_steps}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


def make_schedule(
    total_steps: int,
    steps: int,
    beta_start: float = 0.00085,
    beta_end: float = 0.012,
    eta: float = 0.0,
) -> NoiseSchedule:
    """Scaled-linear beta schedule (sqrt(beta) linearly spaced, then squared)
    with an evenly spaced descending DDIM timestep subsequence starting at T.
    """
    if steps < 1 or total_steps < steps:
        raise ValueError(f"need total_steps >= steps >= 1, got {total_steps}, {steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if eta != 0.0:
        raise ValueError("stochastic DDIM (eta != 0) is unsupported")
    betas = (
        np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), total_steps, dtype=np.float64)
        ** 2
    )
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    stride = total_steps // steps
    timesteps = total_steps - stride * np.arange(steps, dtype=np.int64)
    return NoiseSchedule(
        total_steps=int(total_steps),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        ddim_timesteps=timesteps,
        eta=float(eta),
    )


def forward_noise(z0: np.ndarray, t: int, noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form forward noising: sqrt(ab_t) * z0 + sqrt(1 - ab_t) * noise."""
    z0 = as_f32(z0)
    noise = as_f32(noise)
    if noise.shape != z0.shape:
        raise ValueError(f"noise shape {noise.shape} != z0 shape {z0.shape}")
    if t < 1 or t > sched.total_steps:
        raise ValueError(f"timestep {t} outside [1, {sched.total_steps}]")
    ab = sched.alpha_bar(t)
    out = np.sqrt(ab) * z0.astype(np.float64) + np.sqrt(1.0 - ab) * noise.astype(np.float64)
    return out.astype(np.float32)


def ddim_step(
    z_t: np.ndarray, eps: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule
) -> np.ndarray:
    """One deterministic (eta=0) DDIM step from timestep t down to t_prev.

    Reconstructs the clean-latent estimate from the predicted noise, then
    re-noises it at t_prev with the same predicted noise.
    """
    z_t = as_f32(z_t)
    eps = as_f32(eps)
    if eps.shape != z_t.shape:
        raise ValueError("eps shape must match z_t shape")
    if sched.eta != 0.0:
        raise ValueError("stochastic DDIM (eta != 0) is unsupported")
    if t_prev > t:
        raise ValueError(f"t_prev ({t_prev}) must not exceed t ({t})")
    if t_prev == t:
        return z_t.copy()
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t_prev)
    z64 = z_t.astype(np.float64)
    e64 = eps.astype(np.float64)
    z0_hat = (z64 - np.sqrt(1.0 - ab_t) * e64) / np.sqrt(ab_t)
    out = np.sqrt(ab_prev) * z0_hat + np.sqrt(1.0 - ab_prev) * e64
    return out.astype(np.float32)


def cascade_inject(
    phi_out: np.ndarray, k: int, noise: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """Re-noise the upsampled clean latent at injection timestep K.

    Identical to forward_noise at t = K: mean sqrt(ab_K) * phi_out, standard
    deviation sqrt(1 - ab_K).
    """
    return forward_noise(phi_out, k, noise, sched)


_MIN_ALPHA = 1e-3


@dataclass(frozen=True)
class DetailControl:
    """Spatial map of detail exponents; scalar allowed, entries must be > 0."""

    alpha_map: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha_map, dtype=np.float64)
        if a.size == 0 or np.any(a < _MIN_ALPHA):
            raise ValueError(f"alpha entries must be >= {_MIN_ALPHA}")
        object.__setattr__(self, "alpha_map", a)


def decay_factor(t: int, total_steps: int, alpha) -> np.ndarray:
    """Scaled cosine decay c = ((1 + cos((T-t)/T * pi)) / 2) ** alpha.

    c(0) = 0 and c(T) = 1 for every alpha > 0; larger alpha weakens the
    anchoring for intermediate t.
    """
    base = (1.0 + np.cos((total_steps - t) / total_steps * np.pi)) / 2.0
    return np.power(base, np.asarray(alpha, dtype=np.float64))


def detail_blend(
    anchor: np.ndarray,
    current: np.ndarray,
    t: int,
    ctrl: DetailControl,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Blend the trajectory latent toward the noised upsampled anchor:
    c * anchor + (1 - c) * current, with c from decay_factor.
    """
    anchor = as_f32(anchor)
    current = as_f32(current)
    if anchor.shape != current.shape:
        raise ValueError("anchor and current shapes must agree")
    c = decay_factor(t, sched.total_steps, ctrl.alpha_map)
    c = np.broadcast_to(c, anchor.shape)
    out = c * anchor.astype(np.float64) + (1.0 - c) * current.astype(np.float64)
    return out.astype(np.float32)
