"""Seeded toy UNet noise predictor with hooks for restrained dilated
convolution and scale-fused attention, plus classifier-free guidance.

The architecture is a small symmetric encoder/decoder: a conv stem, two
stride-2 down blocks, a mid block with one self-attention layer, mirrored
up blocks with skip connections, and a conv head. Weights come from a
seeded generator so identical seeds give bit-identical parameters.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import fileio
from .attention import AttentionWeights, FusionConfig, fused_attention, self_attention
from .tensor_ops import Kernel2D, as_f32, conv2d, linear, upsample

BLOCK_GROUPS = ("down", "mid", "up")


@dataclass(frozen=True)
class UNetConfig:
    latent_channels: int = 4
    base_width: int = 32
    down_blocks: int = 2
    time_embedding_dim: int = 64
    cond_dim: int = 32

    def __post_init__(self):
        if min(self.latent_channels, self.base_width, self.down_blocks) < 1:
            raise ValueError("latent_channels, base_width, down_blocks must be >= 1")
        if self.time_embedding_dim % 2 != 0:
            raise ValueError("time_embedding_dim must be even")

    @property
    def widths(self) -> list[int]:
        return [self.base_width * 2**i for i in range(self.down_blocks + 1)]


@dataclass(frozen=True)
class DilationPolicy:
    """Restrained dilation: factor d applied only in the listed block groups
    and disabled for the final stop_fraction of the sampling steps. Up
    blocks are excluded by default (dilating them smears textures).
    """

    dilation_factor: int
    apply_to: frozenset = frozenset({"down", "mid"})
    stop_fraction: float = 0.3

    def __post_init__(self):
        if self.dilation_factor < 1:
            raise ValueError("dilation_factor must be >= 1")
        groups = frozenset(self.apply_to)
        if not groups <= set(BLOCK_GROUPS):
            raise ValueError(f"apply_to must be a subset of {BLOCK_GROUPS}")
        if not (0.0 <= self.stop_fraction <= 1.0):
            raise ValueError("stop_fraction must lie in [0, 1]")
        object.__setattr__(self, "apply_to", groups)

    def group_dilation(self, step_index: int, total_steps: int) -> dict:
        active = step_index < (1.0 - self.stop_fraction) * total_steps
        d = self.dilation_factor if active else 1
        return {g: (d if g in self.apply_to else 1) for g in BLOCK_GROUPS}


class WeightSet:
    """Immutable named parameter collection for one UNetConfig."""

    def __init__(self, config: UNetConfig, params: "OrderedDict[str, np.ndarray]"):
        self.config = config
        self.params = OrderedDict((k, as_f32(v)) for k, v in params.items())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def kernel(self, name: str) -> Kernel2D:
        return Kernel2D(self.params[f"{name}.w"], self.params[f"{name}.b"])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.params.items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        fileio.write_tensor_file(path, self.params)

    @classmethod
    def load(cls, path, config: UNetConfig) -> "WeightSet":
        return cls(config, fileio.read_tensor_file(path))


def _layer_specs(config: UNetConfig):
    """Yield (name, shape, fan_in) for every parameter tensor, in a fixed
    order so seeded initialization is reproducible."""
    w = config.widths
    emb = config.time_embedding_dim
    specs = []

    def conv(name, out_c, in_c):
        specs.append((f"{name}.w", (out_c, in_c, 3, 3), in_c * 9))
        specs.append((f"{name}.b", (out_c,), None))

    def dense(name, in_d, out_d):
        specs.append((f"{name}.w", (in_d, out_d), in_d))
        specs.append((f"{name}.b", (out_d,), None))

    dense("temb.fc1", emb + config.cond_dim, emb)
    dense("temb.fc2", emb, emb)
    conv("stem", w[0], config.latent_channels)
    for i in range(config.down_blocks):
        conv(f"down{i}.conv_a", w[i + 1], w[i])
        conv(f"down{i}.conv_b", w[i + 1], w[i + 1])
        dense(f"down{i}.emb", emb, w[i + 1])
    conv("mid.conv_a", w[-1], w[-1])
    conv("mid.conv_b", w[-1], w[-1])
    dense("mid.emb", emb, w[-1])
    for name in ("w_q", "w_k", "w_v", "w_o"):
        specs.append((f"mid.attn.{name}", (w[-1], w[-1]), w[-1]))
    for i in reversed(range(config.down_blocks)):
        conv(f"up{i}.conv_a", w[i], 2 * w[i + 1])
        conv(f"up{i}.conv_b", w[i], w[i])
        dense(f"up{i}.emb", emb, w[i])
    conv("head", config.latent_channels, w[0])
    return specs


def init_weights(config: UNetConfig, seed: int) -> WeightSet:
    """Kaiming-style fan-in initialization (std = sqrt(2/fan_in)) from a
    seeded generator; biases start at zero."""
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, shape, fan_in in _layer_specs(config):
        if fan_in is None:
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            std = np.sqrt(2.0 / fan_in)
            params[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    return WeightSet(config, params)


def _silu(x: np.ndarray) -> np.ndarray:
    # sigmoid via tanh avoids overflow for large negative inputs
    return (x * 0.5 * (1.0 + np.tanh(0.5 * x))).astype(np.float32)


def _channel_norm(h: np.ndarray) -> np.ndarray:
    """Per-position RMS normalization over channels; keeps activations O(1)
    so the sampler stays stable at any resolution."""
    rms = np.sqrt(np.mean(h.astype(np.float64) ** 2, axis=1, keepdims=True) + 1e-5)
    return (h / rms).astype(np.float32)


def _time_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    angles = t * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)]).astype(np.float32)


def prompt_embedding(prompt: str, cond_dim: int) -> np.ndarray:
    """Fixed pseudo-embedding keyed by a hash of the prompt string."""
    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(seed)
    return rng.standard_normal(cond_dim).astype(np.float32)


def _add_channel_bias(h: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return (h + bias[None, :, None, None]).astype(np.float32)


def _avg_pool2(h: np.ndarray) -> np.ndarray:
    n, c, hh, ww = h.shape
    return (
        h.reshape(n, c, hh // 2, 2, ww // 2, 2).astype(np.float64).mean(axis=(3, 5))
    ).astype(np.float32)


def predict_noise(
    z_t: np.ndarray,
    t: int,
    cond: np.ndarray,
    weights: WeightSet,
    policy: DilationPolicy | None = None,
    fusion: FusionConfig | None = None,
    step_index: int = 0,
    total_steps: int = 1,
    dilation_overrides: dict | None = None,
) -> np.ndarray:
    """Forward pass of the toy UNet.

    When a policy is present and the step is before the late-step cutoff,
    convolutions in its block groups run with the policy's dilation; up
    blocks keep dilation 1 under the default policy. When a fusion config
    is present the mid self-attention layer is replaced by fused_attention.
    dilation_overrides bypasses the policy with an explicit per-group map
    (verification plumbing).
    """
    cfg = weights.config
    z_t = as_f32(z_t)
    cond = as_f32(cond)
    if z_t.ndim != 4:
        raise ValueError(f"expected NCHW latent, got shape {z_t.shape}")
    if z_t.shape[1] != cfg.latent_channels:
        raise ValueError(
            f"latent has {z_t.shape[1]} channels, config expects {cfg.latent_channels}"
        )
    div = 2**cfg.down_blocks
    if z_t.shape[2] % div or z_t.shape[3] % div:
        raise ValueError(f"spatial dims must be divisible by {div}, got {z_t.shape[2:]}")
    if cond.shape != (cfg.cond_dim,):
        raise ValueError(f"cond must have length {cfg.cond_dim}, got shape {cond.shape}")

    if dilation_overrides is not None:
        dil = {g: int(dilation_overrides.get(g, 1)) for g in BLOCK_GROUPS}
    elif policy is not None:
        dil = policy.group_dilation(step_index, total_steps)
    else:
        dil = {g: 1 for g in BLOCK_GROUPS}

    emb = _time_embedding(t, cfg.time_embedding_dim)
    e = np.concatenate([emb, cond])
    e = _silu(linear(e[None, :], weights["temb.fc1.w"], weights["temb.fc1.b"]))
    e = linear(e, weights["temb.fc2.w"], weights["temb.fc2.b"])[0]

    h = conv2d(z_t, weights.kernel("stem"), 1)
    skips = []
    for i in range(cfg.down_blocks):
        h = _channel_norm(h)
        h = _silu(conv2d(h, weights.kernel(f"down{i}.conv_a"), dil["down"]))
        bias = linear(e[None, :], weights[f"down{i}.emb.w"], weights[f"down{i}.emb.b"])[0]
        h = _add_channel_bias(h, bias)
        h = _silu(conv2d(h, weights.kernel(f"down{i}.conv_b"), dil["down"]))
        skips.append(h)
        h = _avg_pool2(h)

    h = _channel_norm(h)
    h = _silu(conv2d(h, weights.kernel("mid.conv_a"), dil["mid"]))
    bias = linear(e[None, :], weights["mid.emb.w"], weights["mid.emb.b"])[0]
    h = _add_channel_bias(h, bias)
    h = _silu(conv2d(h, weights.kernel("mid.conv_b"), dil["mid"]))
    attn_w = AttentionWeights(
        weights["mid.attn.w_q"],
        weights["mid.attn.w_k"],
        weights["mid.attn.w_v"],
        weights["mid.attn.w_o"],
    )
    if fusion is not None:
        grid = fusion.grid_for(h.shape[2], h.shape[3])
        h = (h + fused_attention(h, attn_w, grid, fusion.blur)).astype(np.float32)
    else:
        h = (h + self_attention(h, attn_w)).astype(np.float32)

    for i in reversed(range(cfg.down_blocks)):
        h = upsample(h, 2, "nearest")
        h = np.concatenate([h, skips[i]], axis=1)
        h = _channel_norm(h)
        h = _silu(conv2d(h, weights.kernel(f"up{i}.conv_a"), dil["up"]))
        bias = linear(e[None, :], weights[f"up{i}.emb.w"], weights[f"up{i}.emb.b"])[0]
        h = _add_channel_bias(h, bias)
        h = _silu(conv2d(h, weights.kernel(f"up{i}.conv_b"), dil["up"]))

    return conv2d(_channel_norm(h), weights.kernel("head"), 1)


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, scale: float) -> np.ndarray:
    """Classifier-free guidance: uncond + scale * (cond - uncond)."""
    eps_uncond = as_f32(eps_uncond)
    eps_cond = as_f32(eps_cond)
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError("guidance branches must share one shape")
    out = eps_uncond.astype(np.float64) + scale * (
        eps_cond.astype(np.float64) - eps_uncond.astype(np.float64)
    )
    return out.astype(np.float32)
