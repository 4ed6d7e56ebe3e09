"""Deterministic numeric core: dilated 2-D convolution, resampling,
low-pass filters, row softmax, and affine maps.

All public operations take and return float32 arrays (NCHW for images and
latents). Accumulations run in float64 and are rounded once at the end so
results are order-stable and reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def as_f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


@dataclass(frozen=True)
class Kernel2D:
    """Convolution kernel [out_channels, in_channels, k_h, k_w] plus bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = as_f32(self.weights)
        b = as_f32(self.bias)
        if w.ndim != 4:
            raise ValueError(f"kernel weights must be 4-D, got shape {w.shape}")
        if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
            raise ValueError(f"kernel spatial size must be odd, got {w.shape[2:]}")
        if b.shape != (w.shape[0],):
            raise ValueError("bias length must equal out_channels")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class BlurSpec:
    """Low-pass filter choice: separable Gaussian or ideal DFT cutoff."""

    mode: str = "gaussian"
    sigma: float = 1.0
    cutoff: float = 0.25

    def __post_init__(self):
        if self.mode not in ("gaussian", "ideal_lowpass"):
            raise ValueError(f"unknown blur mode {self.mode!r}")
        if self.mode == "gaussian" and self.sigma <= 0:
            raise ValueError("gaussian sigma must be positive")
        if self.mode == "ideal_lowpass" and not (0.0 < self.cutoff <= 0.5):
            raise ValueError("cutoff must lie in (0, 0.5]")

    @property
    def radius(self) -> int:
        return int(math.ceil(3.0 * self.sigma))


def conv2d(x: np.ndarray, kernel: Kernel2D, dilation: int = 1) -> np.ndarray:
    """Stride-1 "same" convolution with zero padding and dilation factor d.

    Taps are placed at offsets d*(q - center); dilation 1 is the standard
    convolution. Out-of-bounds reads are zero.
    """
    x = as_f32(x)
    if x.ndim != 4:
        raise ValueError(f"input must be NCHW, got shape {x.shape}")
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    n, c, h, w = x.shape
    if c != kernel.in_channels:
        raise ValueError(
            f"channel mismatch: input has {c}, kernel expects {kernel.in_channels}"
        )
    kh, kw = kernel.weights.shape[2:]
    d = int(dilation)
    ph, pw = d * (kh - 1) // 2, d * (kw - 1) // 2
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    xp[:, :, ph : ph + h, pw : pw + w] = x
    wk = kernel.weights.astype(np.float64)
    out = np.zeros((n, kernel.out_channels, h, w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            window = xp[:, :, i * d : i * d + h, j * d : j * d + w]
            # (O,C) x (N,C,H,W) -> (O,N,H,W)
            out += np.tensordot(wk[:, :, i, j], window, axes=([1], [1])).transpose(
                1, 0, 2, 3
            )
    out += kernel.bias.astype(np.float64)[None, :, None, None]
    return out.astype(np.float32)


def _resample_axis_bilinear(x: np.ndarray, factor: int, axis: int) -> np.ndarray:
    n = x.shape[axis]
    src = (np.arange(n * factor, dtype=np.float64) + 0.5) / factor - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    i0 = np.clip(lo, 0, n - 1)
    i1 = np.clip(lo + 1, 0, n - 1)
    shape = [1] * x.ndim
    shape[axis] = -1
    frac = frac.reshape(shape)
    return (1.0 - frac) * np.take(x, i0, axis=axis) + frac * np.take(x, i1, axis=axis)


def upsample(x: np.ndarray, factor: int, mode: str = "nearest") -> np.ndarray:
    """Spatial upsampling by an integer factor (NCHW).

    nearest replicates each pixel factor x factor; bilinear uses the
    align-corners-false convention (sample centers at (i+0.5)/f - 0.5).
    """
    x = as_f32(x)
    if x.ndim != 4:
        raise ValueError(f"input must be NCHW, got shape {x.shape}")
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    if factor == 1:
        return x.copy()
    if mode == "nearest":
        return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)
    if mode == "bilinear":
        y = _resample_axis_bilinear(x.astype(np.float64), int(factor), axis=2)
        y = _resample_axis_bilinear(y, int(factor), axis=3)
        return y.astype(np.float32)
    raise ValueError(f"unknown upsample mode {mode!r}")


def gaussian_taps(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel, truncated at radius ceil(3*sigma)."""
    r = int(math.ceil(3.0 * sigma))
    t = np.exp(-0.5 * (np.arange(-r, r + 1, dtype=np.float64) / sigma) ** 2)
    return t / t.sum()


def _blur_axis(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    r = (len(taps) - 1) // 2
    n = x.shape[axis]
    pad = [(0, 0)] * x.ndim
    pad[axis] = (r, r)
    pad_mode = "reflect" if r <= n - 1 else "symmetric"
    xp = np.pad(x, pad, mode=pad_mode)
    out = np.zeros_like(x)
    for k, g in enumerate(taps):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(k, k + n)
        out += g * xp[tuple(sl)]
    return out


def _ideal_lowpass(x: np.ndarray, cutoff: float) -> np.ndarray:
    h, w = x.shape[-2:]
    fy = np.abs(np.fft.fftfreq(h))
    fx = np.abs(np.fft.fftfreq(w))
    keep = np.maximum(fy[:, None], fx[None, :]) <= cutoff
    spec = np.fft.fft2(x, axes=(-2, -1))
    return np.real(np.fft.ifft2(spec * keep, axes=(-2, -1)))


def lowpass(x: np.ndarray, spec: BlurSpec) -> np.ndarray:
    """Per-channel low-pass filter.

    gaussian: separable blur with reflect padding (constants are fixed
    points, mass preserved for constants). ideal_lowpass: zero every DFT
    coefficient with max(|f_x|, |f_y|) above the cutoff; an idempotent
    linear projection.
    """
    x = as_f32(x)
    if x.ndim != 4:
        raise ValueError(f"input must be NCHW, got shape {x.shape}")
    x64 = x.astype(np.float64)
    if spec.mode == "gaussian":
        taps = gaussian_taps(spec.sigma)
        y = _blur_axis(x64, taps, axis=2)
        y = _blur_axis(y, taps, axis=3)
    else:
        y = _ideal_lowpass(x64, spec.cutoff)
    return y.astype(np.float32)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability."""
    m = as_f32(m)
    if m.ndim != 2:
        raise ValueError(f"input must be 2-D, got shape {m.shape}")
    z = m.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Affine map over the last axis: x @ weight + bias."""
    x = as_f32(x)
    weight = as_f32(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(
            f"dimension mismatch: input dim {x.shape[-1]} vs weight rows {weight.shape[0]}"
        )
    y = x.astype(np.float64) @ weight.astype(np.float64)
    if bias is not None:
        bias = as_f32(bias)
        if bias.shape != (weight.shape[1],):
            raise ValueError("bias length must equal weight columns")
        y = y + bias.astype(np.float64)
    return y.astype(np.float32)
