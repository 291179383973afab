"""Counting error metrics and the CAM compactness diagnostic."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np


class CountPair(NamedTuple):
    actual: float
    target: float


@dataclass(frozen=True)
class EvalResult:
    mae: float
    rmse: float
    pct_under: float
    pct_over: float
    pct_diff: float
    n: int

    CSV_HEADER = "method,MAE,RMSE,%O,%U,%D"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        return cls(**{k: d[k] for k in ("mae", "rmse", "pct_under", "pct_over", "pct_diff", "n")})

    def csv_fields(self) -> list[float]:
        # over-before-under, matching the CSV header
        return [self.mae, self.rmse, self.pct_over, self.pct_under, self.pct_diff]


def evaluate(pairs: Optional[Iterable[CountPair]] = None, *, actual=None, target=None,
             rounded: bool = False, percentages: bool = True) -> EvalResult:
    """MAE, RMSE and the under/over/difference percentages of total target count.

    Pass either ``pairs`` or the ``actual``/``target`` arrays. Exact hits count
    as neither under- nor over-estimates. ``rounded`` rounds predictions to the
    nearest integer first.
    """
    if pairs is not None:
        pairs = list(pairs)
        a = np.array([p[0] for p in pairs], dtype=np.float64)
        t = np.array([p[1] for p in pairs], dtype=np.float64)
    else:
        a = np.asarray(actual, dtype=np.float64).reshape(-1)
        t = np.asarray(target, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValueError("evaluate needs at least one (actual, target) pair")
    if a.shape != t.shape:
        raise ValueError(f"{a.size} predictions but {t.size} targets")
    if not (np.isfinite(a).all() and np.isfinite(t).all()):
        raise ValueError("non-finite counts")
    if rounded:
        a = np.floor(a + 0.5)
    n = a.size
    d = a - t
    ad = np.abs(d)
    mae = math.fsum(ad) / n
    rmse = math.sqrt(math.fsum(d * d) / n)
    if percentages:
        total = math.fsum(t)
        if total <= 0:
            raise ValueError("percentage metrics need a positive total target count")
        under = math.fsum(ad[d < 0]) / total * 100.0
        over = math.fsum(ad[d > 0]) / total * 100.0
    else:
        under = over = 0.0
    return EvalResult(mae=mae, rmse=rmse, pct_under=under, pct_over=over,
                      pct_diff=under + over, n=n)


def cell_centers(shape: tuple[int, int], stride: int) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    ys = (np.arange(h) + 0.5) * stride
    xs = (np.arange(w) + 0.5) * stride
    return np.meshgrid(xs, ys)


def cam_mass_ratio(cam, dots: Sequence[Sequence[float]], radius: float,
                   stride: Optional[int] = None,
                   image_extents: Optional[tuple[int, int]] = None) -> float:
    """Share of positive CAM mass in cells whose center lies within ``radius`` of a dot.

    ``cam`` is an ActivationMap or a 2-D array (then ``stride`` is required).
    Returns 0 when the CAM has no positive mass.
    """
    from .heatmap import ActivationMap, DotAnnotation

    if isinstance(dots, DotAnnotation):
        dots = dots.dots
    if isinstance(cam, ActivationMap):
        values, s, extents = cam.values, cam.stride, cam.image_extents
        if stride is not None and stride != s:
            raise ValueError(f"stride {stride} disagrees with map stride {s}")
    else:
        values = np.asarray(cam, dtype=np.float64)
        if stride is None:
            raise ValueError("stride is required for a bare array CAM")
        s, extents = stride, None
    if image_extents is not None:
        extents = tuple(image_extents)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {values.shape}")
    if extents is not None and (values.shape[0] * s, values.shape[1] * s) != tuple(extents):
        raise ValueError(f"{values.shape} map at stride {s} is misaligned with image {extents}")
    if not radius > 0:
        raise ValueError("radius must be positive")

    pos = np.clip(values, 0.0, None)
    total = pos.sum()
    if total <= 0:
        return 0.0
    cx, cy = cell_centers(values.shape, s)
    near = np.zeros(values.shape, dtype=bool)
    for x, y in dots:
        near |= (cx - x) ** 2 + (cy - y) ** 2 <= radius * radius
    return float(pos[near].sum() / total)
