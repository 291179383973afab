"""Gaussian activation maps (GAM) rendered from dot annotations.

Kernels are amplitude-normalised (peak 1), not unit-mass: the map is a
saliency target, and count information is supervised separately. Overlapping
dots add. Each dot is splatted at the nearest full-resolution pixel center
before mean-pooling down to CAM resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .engine import Tensor, minmax_normalize


@dataclass(frozen=True)
class DotAnnotation:
    """Object centers as (x, y) image coordinates, origin top-left, in pixels."""

    dots: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dots", tuple((float(x), float(y)) for x, y in self.dots))

    @property
    def count(self) -> int:
        return len(self.dots)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.dots, dtype=np.float64).reshape(-1, 2)

    def check_bounds(self, height: int, width: int) -> None:
        for x, y in self.dots:
            if not (0 <= x < width and 0 <= y < height):
                raise ValueError(f"dot ({x}, {y}) outside {height}x{width} image")


@dataclass(frozen=True)
class GamConfig:
    sigma: float = 2.0
    kernel_radius: Optional[int] = None
    downscale: int = 8
    combine_mode: str = "sum"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.downscale < 1:
            raise ValueError(f"downscale must be >= 1, got {self.downscale}")
        if self.kernel_radius is not None and self.kernel_radius < 0:
            raise ValueError("kernel_radius must be >= 0")
        if self.combine_mode != "sum":
            raise ValueError(f"unsupported combine_mode {self.combine_mode!r}")

    @property
    def radius(self) -> int:
        if self.kernel_radius is not None:
            return int(self.kernel_radius)
        return int(math.ceil(3 * self.sigma))


@dataclass
class ActivationMap:
    values: np.ndarray  # (h, w)
    stride: int
    image_extents: tuple[int, int]

    def __post_init__(self):
        h, w = self.values.shape
        H, W = self.image_extents
        if h * self.stride != H or w * self.stride != W:
            raise ValueError(f"{h}x{w} map at stride {self.stride} does not tile {H}x{W}")


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """``exp(-(dx^2 + dy^2) / (2 sigma^2))`` on a (2r+1)^2 grid, peak 1 at the center."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    g1 = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return np.outer(g1, g1)


def dot_pixel(x: float, y: float) -> tuple[int, int]:
    """Row/column of the pixel whose center (i + 0.5) is nearest to (x, y)."""
    return int(math.floor(y)), int(math.floor(x))


def splat(dots: Iterable[Sequence[float]], extents: tuple[int, int], sigma: float,
          radius: int) -> np.ndarray:
    """Full-resolution sum of truncated kernels, one per dot."""
    H, W = extents
    out = np.zeros((H, W), dtype=np.float64)
    k = gaussian_kernel(sigma, radius)
    for x, y in dots:
        if not (0 <= x < W and 0 <= y < H):
            raise ValueError(f"dot ({x}, {y}) outside {H}x{W} image")
        r, c = dot_pixel(x, y)
        r0, r1 = max(r - radius, 0), min(r + radius + 1, H)
        c0, c1 = max(c - radius, 0), min(c + radius + 1, W)
        out[r0:r1, c0:c1] += k[r0 - r + radius:r1 - r + radius, c0 - c + radius:c1 - c + radius]
    return out


def downscale_mean(full: np.ndarray, stride: int) -> np.ndarray:
    H, W = full.shape
    if H % stride or W % stride:
        raise ValueError(f"extents {H}x{W} not divisible by {stride}")
    return full.reshape(H // stride, stride, W // stride, stride).mean(axis=(1, 3))


def render_gam(ann, extents: tuple[int, int], cfg: GamConfig) -> ActivationMap:
    dots = ann.dots if isinstance(ann, DotAnnotation) else ann
    H, W = extents
    if H % cfg.downscale or W % cfg.downscale:
        raise ValueError(f"extents {H}x{W} not divisible by downscale {cfg.downscale}")
    full = splat(dots, extents, cfg.sigma, cfg.radius)
    return ActivationMap(downscale_mean(full, cfg.downscale), cfg.downscale, (H, W))


def normalize_map(m, eps: float = 1e-6, lo=None, hi=None):
    """Min-max rescale to [0, 1]: ``(m - min) / (max - min + eps)``.

    Accepts an ActivationMap, a 2-D array, or a Tensor. Tensors of shape
    (N, h, w) are normalised per map, with min and max treated as constants
    on the tape. ``lo``/``hi`` pin the statistics instead of measuring them.
    """
    if isinstance(m, Tensor):
        axes = tuple(range(1, m.ndim)) if m.ndim == 3 else None
        return minmax_normalize(m, eps, axes=axes, lo=lo, hi=hi)
    if isinstance(m, ActivationMap):
        return ActivationMap(normalize_map(m.values, eps, lo, hi), m.stride, m.image_extents)
    v = np.asarray(m, dtype=np.float64)
    axes = tuple(range(1, v.ndim)) if v.ndim == 3 else None
    lo = v.min(axis=axes, keepdims=True) if lo is None else lo
    hi = v.max(axis=axes, keepdims=True) if hi is None else hi
    return (v - lo) / (hi - lo + eps)
