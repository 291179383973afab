"""Heatmap overlays: a normalised map upscaled onto its grayscale image."""
from __future__ import annotations

import numpy as np
from PIL import Image

# blue -> cyan -> green -> yellow -> red at evenly spaced stops
ANCHORS = np.array([
    [0, 0, 255],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
], dtype=np.float64)


def colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to RGB floats in [0, 255] by piecewise-linear interpolation."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pos = v * (len(ANCHORS) - 1)
    lo = np.minimum(np.floor(pos).astype(int), len(ANCHORS) - 2)
    frac = (pos - lo)[..., None]
    return ANCHORS[lo] * (1.0 - frac) + ANCHORS[lo + 1] * frac


def upscale_nearest(m: np.ndarray, stride: int) -> np.ndarray:
    return np.repeat(np.repeat(m, stride, axis=0), stride, axis=1)


def overlay(gray: np.ndarray, heat: np.ndarray, stride: int, alpha: float = 0.5) -> np.ndarray:
    """Blend ``colormap(heat)`` over ``gray``; returns an (H, W, 3) uint8 image.

    ``gray`` is (H, W) in [0, 1]; ``heat`` is the (H/stride, W/stride) map,
    already normalised to [0, 1].
    """
    gray = np.asarray(gray, dtype=np.float64)
    up = upscale_nearest(np.asarray(heat, dtype=np.float64), stride)
    if up.shape != gray.shape:
        raise ValueError(f"map {heat.shape} at stride {stride} does not cover image {gray.shape}")
    g255 = np.round(np.clip(gray, 0.0, 1.0) * 255.0)[..., None]
    out = (1.0 - alpha) * g255 + alpha * colormap(up)
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)


def save_png(rgb: np.ndarray, path) -> None:
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def load_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
