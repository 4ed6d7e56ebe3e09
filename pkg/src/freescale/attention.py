"""Self-attention over spatial feature maps, shifted crop sampling with
overlap-averaged reconstruction, and frequency-split scale fusion.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .tensor_ops import BlurSpec, as_f32, linear, lowpass, softmax_rows


@dataclass(frozen=True)
class AttentionWeights:
    """Single-head attention projections; all matrices are [dim, dim]."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    def __post_init__(self):
        mats = {}
        dim = None
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m = as_f32(getattr(self, name))
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square, got shape {m.shape}")
            if dim is None:
                dim = m.shape[0]
            elif m.shape[0] != dim:
                raise ValueError("attention matrices must share one dimension")
            mats[name] = m
        for name, m in mats.items():
            object.__setattr__(self, name, m)

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]


@dataclass(frozen=True)
class PatchGrid:
    """Strided grid of (window_h x window_w) crops over an H x W map.

    Requires exact tiling: (H - h) divisible by the vertical stride and
    (W - w) by the horizontal stride, so every pixel is covered.
    """

    height: int
    width: int
    window_h: int
    window_w: int
    stride_h: int
    stride_w: int

    def __post_init__(self):
        if not (0 < self.window_h <= self.height and 0 < self.window_w <= self.width):
            raise ValueError("window must fit inside the feature map")
        if self.stride_h < 1 or self.stride_w < 1:
            raise ValueError("strides must be positive")
        if (self.height - self.window_h) % self.stride_h != 0:
            raise ValueError(
                f"(H - h) = {self.height - self.window_h} not divisible by stride {self.stride_h}"
            )
        if (self.width - self.window_w) % self.stride_w != 0:
            raise ValueError(
                f"(W - w) = {self.width - self.window_w} not divisible by stride {self.stride_w}"
            )

    @property
    def count(self) -> int:
        rows = (self.height - self.window_h) // self.stride_h + 1
        cols = (self.width - self.window_w) // self.stride_w + 1
        return rows * cols

    @property
    def positions(self) -> list[tuple[int, int]]:
        """(top, left) corners in row-major order."""
        tops = range(0, self.height - self.window_h + 1, self.stride_h)
        lefts = range(0, self.width - self.window_w + 1, self.stride_w)
        return [(t, l) for t in tops for l in lefts]


def self_attention(h_in: np.ndarray, weights: AttentionWeights) -> np.ndarray:
    """Single-head self-attention over the H*W spatial tokens of a [1,C,H,W]
    map, followed by the output projection. Position-free by construction.
    """
    h_in = as_f32(h_in)
    if h_in.ndim != 4 or h_in.shape[0] != 1:
        raise ValueError(f"expected [1,C,H,W], got shape {h_in.shape}")
    _, c, hh, ww = h_in.shape
    if c != weights.dim:
        raise ValueError(f"channel count {c} != attention dim {weights.dim}")
    tokens = h_in.reshape(c, hh * ww).T  # [tokens, C]
    q = linear(tokens, weights.w_q)
    k = linear(tokens, weights.w_k)
    v = linear(tokens, weights.w_v)
    scores = (q.astype(np.float64) @ k.astype(np.float64).T) / np.sqrt(float(weights.dim))
    attn = softmax_rows(scores.astype(np.float32))
    out = attn.astype(np.float64) @ v.astype(np.float64)
    out = linear(out.astype(np.float32), weights.w_o)
    return out.T.reshape(1, c, hh, ww)


def shifted_crop_sampling(h_in: np.ndarray, grid: PatchGrid) -> list[np.ndarray]:
    """Extract the grid's crops from a [1,C,H,W] map in row-major order."""
    h_in = as_f32(h_in)
    if h_in.ndim != 4 or h_in.shape[2] != grid.height or h_in.shape[3] != grid.width:
        raise ValueError(
            f"feature shape {h_in.shape} does not match grid {grid.height}x{grid.width}"
        )
    return [
        h_in[:, :, top : top + grid.window_h, left : left + grid.window_w].copy()
        for top, left in grid.positions
    ]


def reconstruct_average(patches: list[np.ndarray], grid: PatchGrid) -> np.ndarray:
    """Reassemble crops onto the full map, averaging overlapped pixels."""
    if len(patches) != grid.count:
        raise ValueError(f"expected {grid.count} patches, got {len(patches)}")
    first = as_f32(patches[0])
    c = first.shape[1]
    acc = np.zeros((1, c, grid.height, grid.width), dtype=np.float64)
    cover = np.zeros((grid.height, grid.width), dtype=np.float64)
    for patch, (top, left) in zip(patches, grid.positions):
        patch = as_f32(patch)
        if patch.shape != (1, c, grid.window_h, grid.window_w):
            raise ValueError(f"bad patch shape {patch.shape}")
        acc[:, :, top : top + grid.window_h, left : left + grid.window_w] += patch
        cover[top : top + grid.window_h, left : left + grid.window_w] += 1.0
    return (acc / cover).astype(np.float32)


def scale_fusion(h_global: np.ndarray, h_local: np.ndarray, blur: BlurSpec) -> np.ndarray:
    """High-frequency band of the global branch plus low-frequency band of
    the local branch: (g - lowpass(g)) + lowpass(l).
    """
    h_global = as_f32(h_global)
    h_local = as_f32(h_local)
    if h_global.shape != h_local.shape:
        raise ValueError("global/local shapes must agree")
    out = (
        h_global.astype(np.float64)
        - lowpass(h_global, blur).astype(np.float64)
        + lowpass(h_local, blur).astype(np.float64)
    )
    return out.astype(np.float32)


def _worker_count() -> int:
    raw = os.environ.get("FREESCALE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def fused_attention(
    h_in: np.ndarray,
    weights: AttentionWeights,
    grid: PatchGrid,
    blur: BlurSpec,
) -> np.ndarray:
    """Scale-fused self-attention: global attention over the whole map,
    patch-local attention reassembled by overlap averaging, fused per band.
    """
    h_global = self_attention(h_in, weights)
    patches = shifted_crop_sampling(h_in, grid)
    workers = _worker_count()
    if workers > 1 and len(patches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            # map preserves submission order; reconstruction then reduces in
            # row-major patch order, keeping the result bitwise reproducible
            attended = list(pool.map(lambda p: self_attention(p, weights), patches))
    else:
        attended = [self_attention(p, weights) for p in patches]
    h_local = reconstruct_average(attended, grid)
    return scale_fusion(h_global, h_local, blur)


@dataclass(frozen=True)
class FusionConfig:
    """Per-level fusion settings: patch window size on the attention map at
    the training resolution, and the low-pass filter used for fusion.
    Strides default to half the window.
    """

    window: int
    blur: BlurSpec

    def grid_for(self, height: int, width: int) -> PatchGrid:
        h = min(self.window, height)
        w = min(self.window, width)
        stride_h = max(h // 2, 1) if height > h else h
        stride_w = max(w // 2, 1) if width > w else w
        return PatchGrid(height, width, h, w, stride_h, stride_w)
