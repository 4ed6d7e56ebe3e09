"""Deterministic desk-scale tuning-free high-resolution diffusion cascade:
self-cascade upscaling, restrained dilated convolution, and frequency-split
scale fusion over a seeded toy denoiser.
"""

__version__ = "0.1.0"
