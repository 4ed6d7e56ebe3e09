"""Full inference orchestration: base-resolution generation followed by
per-level self-cascade upscaling with restrained dilation, scale-fused
attention, and region-aware detail control.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .attention import FusionConfig
from .denoiser import (
    DilationPolicy,
    UNetConfig,
    WeightSet,
    cfg_combine,
    init_weights,
    predict_noise,
    prompt_embedding,
)
from .scheduler import (
    DetailControl,
    NoiseSchedule,
    cascade_inject,
    ddim_step,
    detail_blend,
    forward_noise,
    make_schedule,
)
from .tensor_ops import BlurSpec, as_f32
from .vae import AutoencoderSpec, decode, make_autoencoder, phi_upsample

TOOL_VERSION = "0.1.0"


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


class NumericError(RuntimeError):
    """Non-finite values encountered during generation (CLI exit code 3)."""


@dataclass
class CascadeConfig:
    prompt: str = ""
    levels: tuple = (1, 2, 4)
    total_timesteps: int = 1000
    steps: int = 50
    eta: float = 0.0
    injection_step: int = 700
    guidance_scale: float = 7.5
    upsample_space: str = "rgb"
    latent_upsample_mode: str = "nearest"
    alpha_default: float = 2.0
    alpha_per_level: dict = field(default_factory=dict)
    blur_mode: str = "gaussian"
    blur_sigma: float = 1.0
    blur_cutoff: float = 0.25
    base_latent_size: int = 16
    vae_patch: int = 2
    base_width: int = 32
    down_blocks: int = 2
    time_embedding_dim: int = 64
    cond_dim: int = 32
    dilation_enabled: bool = True
    dilation_stop_fraction: float = 0.3
    fusion_enabled: bool = True
    blend_enabled: bool = True
    alpha_lo: float = 0.5
    alpha_hi: float = 3.0
    seed: int = 0

    def validate(self) -> None:
        levels = tuple(int(r) for r in self.levels)
        if not levels:
            raise ConfigError("levels must be non-empty")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError("levels must be ascending")
        if levels[0] != 1:
            raise ConfigError("levels must start at 1")
        for a, b in zip(levels, levels[1:]):
            ratio = b // a
            if a * ratio != b or ratio & (ratio - 1):
                raise ConfigError("each level must be a power-of-two multiple of the last")
        self.levels = levels
        if not (1 <= self.injection_step <= self.total_timesteps):
            raise ConfigError("injection_step must lie in [1, total_timesteps]")
        if self.steps < 1 or self.steps > self.total_timesteps:
            raise ConfigError("steps must lie in [1, total_timesteps]")
        if self.eta != 0.0:
            raise ConfigError("only deterministic DDIM (eta = 0) is supported")
        if self.upsample_space not in ("rgb", "latent"):
            raise ConfigError("upsample_space must be 'rgb' or 'latent'")
        if self.alpha_default <= 0 or self.alpha_lo <= 0 or self.alpha_hi <= 0:
            raise ConfigError("alpha values must be positive")
        div = 2**self.down_blocks
        if self.base_latent_size % div:
            raise ConfigError(f"base_latent_size must be divisible by {div}")
        if not (0.0 <= self.dilation_stop_fraction <= 1.0):
            raise ConfigError("dilation_stop_fraction must lie in [0, 1]")
        try:
            self.blur()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        # window on the mid-block attention map; fusion grids need >= 2
        if self.base_latent_size // div < 2:
            raise ConfigError("base_latent_size too small for the attention window")

    def blur(self) -> BlurSpec:
        return BlurSpec(mode=self.blur_mode, sigma=self.blur_sigma, cutoff=self.blur_cutoff)

    def unet_config(self) -> UNetConfig:
        return UNetConfig(
            latent_channels=3 * self.vae_patch**2,
            base_width=self.base_width,
            down_blocks=self.down_blocks,
            time_embedding_dim=self.time_embedding_dim,
            cond_dim=self.cond_dim,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["levels"] = list(self.levels)
        return d

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "CascadeConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**raw)
        if isinstance(cfg.levels, list):
            cfg.levels = tuple(cfg.levels)
        cfg.alpha_per_level = {int(k): float(v) for k, v in dict(cfg.alpha_per_level).items()}
        cfg.validate()
        return cfg


def nearest_resize(map2d: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of a 2-D map (no value interpolation, so
    region boundaries stay crisp)."""
    map2d = np.asarray(map2d, dtype=np.float32)
    in_h, in_w = map2d.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(int), in_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(int), in_w - 1)
    return map2d[np.ix_(rows, cols)]


def _check_finite(z: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(z)):
        raise NumericError(f"non-finite values in {where}")


def _latent_shape(config: CascadeConfig, level: int) -> tuple:
    n = config.base_latent_size * level
    return (1, 3 * config.vae_patch**2, n, n)


def _alpha_map_for_level(
    config: CascadeConfig, level: int, mask: np.ndarray | None
) -> np.ndarray:
    if mask is not None:
        alpha_img = config.alpha_lo + mask * (config.alpha_hi - config.alpha_lo)
        n = config.base_latent_size * level
        return nearest_resize(alpha_img, n, n)[None, None]
    return np.asarray(config.alpha_per_level.get(level, config.alpha_default))


def _denoise_loop(
    z: np.ndarray,
    timesteps,
    sched: NoiseSchedule,
    cond: np.ndarray,
    uncond: np.ndarray,
    weights: WeightSet,
    guidance_scale: float,
    policy: DilationPolicy | None = None,
    fusion: FusionConfig | None = None,
    anchor: np.ndarray | None = None,
    anchor_noise: np.ndarray | None = None,
    ctrl: DetailControl | None = None,
) -> np.ndarray:
    total = len(timesteps)
    for i, t in enumerate(timesteps):
        t = int(t)
        t_prev = int(timesteps[i + 1]) if i + 1 < total else 0
        eps_c = predict_noise(z, t, cond, weights, policy, fusion, i, total)
        eps_u = predict_noise(z, t, uncond, weights, policy, fusion, i, total)
        eps = cfg_combine(eps_u, eps_c, guidance_scale)
        z = ddim_step(z, eps, t, t_prev, sched)
        if ctrl is not None and t_prev > 0:
            z_anchor = forward_noise(anchor, t_prev, anchor_noise, sched)
            z = detail_blend(z_anchor, z, t_prev, ctrl, sched)
        _check_finite(z, f"latent at timestep {t_prev}")
    return z


def generate_base(
    prompt: str, config: CascadeConfig, weights: WeightSet, sched: NoiseSchedule
) -> np.ndarray:
    """Plain seeded DDIM generation at the training resolution (no dilation,
    no fusion, no blending)."""
    cond = prompt_embedding(prompt, config.cond_dim)
    uncond = np.zeros(config.cond_dim, dtype=np.float32)
    rng = np.random.default_rng([config.seed, 0])
    z = rng.standard_normal(_latent_shape(config, 1)).astype(np.float32)
    return _denoise_loop(
        z, sched.ddim_timesteps, sched, cond, uncond, weights, config.guidance_scale
    )


def cascade_level(
    z0_prev: np.ndarray,
    r_from: int,
    r_to: int,
    config: CascadeConfig,
    weights: WeightSet,
    vae_spec: AutoencoderSpec,
    sched: NoiseSchedule,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """One resolution doubling: upsample the clean latent, re-noise it at
    the injection step, then denoise the tail of the DDIM subsequence with
    restrained dilation, fused attention, and detail blending.
    """
    if r_to != 2 * r_from:
        raise ConfigError(f"cascade doubles resolution per call, got {r_from} -> {r_to}")
    phi = phi_upsample(z0_prev, 2, config.upsample_space, config.latent_upsample_mode, vae_spec)
    rng = np.random.default_rng([config.seed, r_to])
    # one noise draw per level: it drives the injection and stays the anchor
    # noise for every blend step, so the anchor trajectory is consistent
    anchor_noise = rng.standard_normal(phi.shape).astype(np.float32)
    z = cascade_inject(phi, config.injection_step, anchor_noise, sched)
    timesteps = [int(t) for t in sched.ddim_timesteps if t <= config.injection_step]

    policy = None
    if config.dilation_enabled:
        policy = DilationPolicy(
            dilation_factor=r_to, stop_fraction=config.dilation_stop_fraction
        )
    fusion = None
    if config.fusion_enabled:
        window = config.base_latent_size // 2**config.down_blocks
        fusion = FusionConfig(window=window, blur=config.blur())
    ctrl = None
    if config.blend_enabled:
        ctrl = DetailControl(_alpha_map_for_level(config, r_to, mask))

    cond = prompt_embedding(config.prompt, config.cond_dim)
    uncond = np.zeros(config.cond_dim, dtype=np.float32)
    return _denoise_loop(
        z,
        timesteps,
        sched,
        cond,
        uncond,
        weights,
        config.guidance_scale,
        policy=policy,
        fusion=fusion,
        anchor=phi,
        anchor_noise=anchor_noise,
        ctrl=ctrl,
    )


def latent_to_image(z0: np.ndarray, vae_spec: AutoencoderSpec) -> np.ndarray:
    """Decode a clean latent and map it to displayable [0,1] RGB.

    The decoded reals are standardized before the affine display map so the
    emitted image uses the full range without saturating.
    """
    rgb = decode(z0, vae_spec).astype(np.float64)
    rgb = (rgb - rgb.mean()) / (rgb.std() + 1e-8)
    return np.clip(0.5 + rgb / 6.0, 0.0, 1.0).astype(np.float32)


def run(prompt: str | None, config: CascadeConfig, mask: np.ndarray | None = None) -> dict:
    """Execute the full cascade; returns {"image", "latent", "manifest"}."""
    config.validate()
    if prompt is None:
        prompt = config.prompt
    else:
        config.prompt = prompt
    sched = make_schedule(config.total_timesteps, config.steps)
    weights = init_weights(config.unet_config(), config.seed)
    vae_spec = make_autoencoder(config.vae_patch, config.seed + 1)

    level_stats = []
    t0 = time.perf_counter()
    z0 = generate_base(prompt, config, weights, sched)
    level_stats.append(_level_record(1, z0, t0))

    level = 1
    for target in config.levels[1:]:
        while level < target:
            t0 = time.perf_counter()
            z0 = cascade_level(z0, level, 2 * level, config, weights, vae_spec, sched, mask)
            level *= 2
            level_stats.append(_level_record(level, z0, t0))

    image = latent_to_image(z0, vae_spec)
    _check_finite(image, "decoded image")
    manifest = {
        "config_sha256": config.sha256(),
        "seed": config.seed,
        "levels": level_stats,
        "tool_version": TOOL_VERSION,
    }
    return {"image": image, "latent": z0, "manifest": manifest}


def _level_record(level: int, z0: np.ndarray, t_start: float) -> dict:
    return {
        "level": level,
        "wall_ms": round(1000.0 * (time.perf_counter() - t_start), 3),
        "latent_mean": float(np.mean(z0)),
        "latent_std": float(np.std(z0)),
    }


def direct_generate(config: CascadeConfig, level: int) -> np.ndarray:
    """Plain DDIM inference directly at the given resolution level (the
    benchmarking baseline; no cascade machinery)."""
    config.validate()
    sched = make_schedule(config.total_timesteps, config.steps)
    weights = init_weights(config.unet_config(), config.seed)
    cond = prompt_embedding(config.prompt, config.cond_dim)
    uncond = np.zeros(config.cond_dim, dtype=np.float32)
    rng = np.random.default_rng([config.seed, 1000 + level])
    z = rng.standard_normal(_latent_shape(config, level)).astype(np.float32)
    return _denoise_loop(
        z, sched.ddim_timesteps, sched, cond, uncond, weights, config.guidance_scale
    )
