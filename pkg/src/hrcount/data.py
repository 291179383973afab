"""Synthetic dot-annotated counting datasets.

Images hold bright soft-edged disks (counted), low-contrast disks standing in
for shadowed or dark instances (counted), and rings/bars of object-like
intensity (never counted) over a smooth noise background. Sample ``i`` is a
pure function of ``(seed, i)``.

On-disk layout::

    images/<id>.png      8-bit grayscale
    annotations.jsonl    {"id": ..., "image": "images/<id>.png", "dots": [[x, y], ...]}
    manifest.json        config echo, n_samples, seed, format_version
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .heatmap import DotAnnotation

FORMAT_VERSION = 1
MAX_PLACEMENT_ATTEMPTS = 500
MAX_LAYOUTS = 50


class DatasetError(ValueError):
    """Missing or malformed dataset files."""


class PlacementError(RuntimeError):
    """Objects could not be placed under the geometric constraints."""


def _pair(v, cast=float) -> tuple:
    lo, hi = v
    return cast(lo), cast(hi)


@dataclass(frozen=True)
class SyntheticConfig:
    height: int = 64
    width: int = 64
    count_range: tuple[int, int] = (2, 12)
    radius_range: tuple[float, float] = (3.0, 5.0)
    intensity_range: tuple[float, float] = (0.7, 1.0)
    hard_object_fraction: float = 0.2
    hard_intensity_range: tuple[float, float] = (0.25, 0.4)
    distractor_count_range: tuple[int, int] = (0, 4)
    background_level: float = 0.1
    background_smoothness: float = 4.0
    min_separation: float = 6.0
    seed: int = 0

    def __post_init__(self):
        for name, cast in (("count_range", int), ("radius_range", float),
                           ("intensity_range", float), ("hard_intensity_range", float),
                           ("distractor_count_range", int)):
            object.__setattr__(self, name, _pair(getattr(self, name), cast))
        self.validate()

    def validate(self) -> None:
        def ordered(name, lo_min=None):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} exceeds max {hi}")
            if lo_min is not None and lo < lo_min:
                raise ValueError(f"{name}: values must be >= {lo_min}")

        ordered("count_range", 0)
        ordered("distractor_count_range", 0)
        ordered("radius_range", 0.5)
        for name in ("intensity_range", "hard_intensity_range"):
            ordered(name, 0.0)
            if getattr(self, name)[1] > 1.0:
                raise ValueError(f"{name} must lie within [0, 1]")
        if not 0.0 <= self.hard_object_fraction <= 1.0:
            raise ValueError("hard_object_fraction must lie in [0, 1]")
        if not 0.0 <= self.background_level <= 1.0:
            raise ValueError("background_level must lie in [0, 1]")
        if self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")
        margin = 2 * (self.radius_range[1] + 1)
        if self.height <= margin or self.width <= margin:
            raise ValueError(f"{self.height}x{self.width} image too small for radius "
                             f"{self.radius_range[1]}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        return cls(**d)


@dataclass
class Sample:
    id: str
    image: np.ndarray  # (H, W) in [0, 1]
    annotation: DotAnnotation
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def count(self) -> int:
        return self.annotation.count


def sample_id(index: int) -> str:
    return f"{index:06d}"


def _pixel_centers(h: int, w: int):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs + 0.5, ys + 0.5


def _blend(img: np.ndarray, alpha: np.ndarray, value: float) -> None:
    np.clip(alpha, 0.0, 1.0, out=alpha)
    img *= 1.0 - alpha
    img += alpha * value


def _disk_alpha(px, py, cx, cy, r):
    return r + 0.5 - np.hypot(px - cx, py - cy)


def _ring_alpha(px, py, cx, cy, r, thickness):
    d = np.hypot(px - cx, py - cy)
    return np.minimum(r + 0.5 - d, d - (r - thickness) + 0.5)


def _bar_alpha(px, py, cx, cy, half_len, half_width, angle):
    ux, uy = math.cos(angle), math.sin(angle)
    dx, dy = px - cx, py - cy
    along = np.clip(dx * ux + dy * uy, -half_len, half_len)
    ex, ey = dx - along * ux, dy - along * uy
    return half_width + 0.5 - np.hypot(ex, ey)


def _place(rng, extent, h, w, ok) -> tuple[float, float]:
    lo_x, hi_x = extent + 1.0, w - extent - 1.0
    lo_y, hi_y = extent + 1.0, h - extent - 1.0
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        x, y = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
        if ok(x, y):
            return x, y
    raise PlacementError(f"no valid position after {MAX_PLACEMENT_ATTEMPTS} attempts")


def _layout(rng, cfg: SyntheticConfig):
    h, w = cfg.height, cfg.width
    n_obj = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    objects = []
    for _ in range(n_obj):
        r = rng.uniform(*cfg.radius_range)
        x, y = _place(rng, r, h, w, lambda x, y: all(
            math.hypot(x - o[0], y - o[1]) >= cfg.min_separation for o in objects))
        hard = bool(rng.random() < cfg.hard_object_fraction)
        inten = rng.uniform(*(cfg.hard_intensity_range if hard else cfg.intensity_range))
        objects.append((x, y, r, hard, inten))

    n_dis = int(rng.integers(cfg.distractor_count_range[0], cfg.distractor_count_range[1] + 1))
    distractors = []
    for _ in range(n_dis):
        if rng.random() < 0.5:
            kind = "ring"
            extent = rng.uniform(*cfg.radius_range) + 0.5
            shape = {"r": extent, "thickness": rng.uniform(1.2, 2.0)}
        else:
            kind = "bar"
            extent = rng.uniform(cfg.radius_range[0] + 1.0, cfg.radius_range[1] + 2.0)
            shape = {"half_len": extent, "half_width": rng.uniform(0.8, 1.4),
                     "angle": rng.uniform(0.0, math.pi)}

        def clear(x, y, extent=extent):
            return (all(math.hypot(x - o[0], y - o[1]) >= extent + o[2] + 1.0 for o in objects)
                    and all(math.hypot(x - d[0], y - d[1]) >= extent + d[2] + 1.0
                            for d in distractors))

        x, y = _place(rng, extent, h, w, clear)
        inten = rng.uniform(*cfg.intensity_range)
        distractors.append((x, y, extent, kind, shape, inten))
    return objects, distractors


def generate_sample(cfg: SyntheticConfig, index: int) -> Sample:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    h, w = cfg.height, cfg.width
    px, py = _pixel_centers(h, w)

    noise = gaussian_filter(rng.standard_normal((h, w)), cfg.background_smoothness, mode="wrap")
    span = noise.max() - noise.min()
    img = (noise - noise.min()) / span * cfg.background_level if span > 0 else np.zeros((h, w))

    for attempt in range(MAX_LAYOUTS):
        try:
            objects, distractors = _layout(rng, cfg)
            break
        except PlacementError:
            if attempt == MAX_LAYOUTS - 1:
                raise PlacementError(f"sample {index}: no layout satisfies the placement "
                                     f"constraints after {MAX_LAYOUTS} attempts") from None

    for x, y, extent, kind, shape, inten in distractors:
        if kind == "ring":
            alpha = _ring_alpha(px, py, x, y, shape["r"], shape["thickness"])
        else:
            alpha = _bar_alpha(px, py, x, y, shape["half_len"], shape["half_width"],
                               shape["angle"])
        _blend(img, alpha, inten)
    for x, y, r, _hard, inten in objects:
        _blend(img, _disk_alpha(px, py, x, y, r), inten)
    np.clip(img, 0.0, 1.0, out=img)

    meta = {"hard": [o[3] for o in objects],
            "distractors": [(d[0], d[1], d[3]) for d in distractors]}
    return Sample(id=sample_id(index), image=img,
                  annotation=DotAnnotation(tuple((o[0], o[1]) for o in objects)), meta=meta)


def quantize(img: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def generate_dataset(cfg: SyntheticConfig, n_samples: int, out_dir) -> dict:
    """Write ``n_samples`` samples under ``out_dir`` and return the manifest."""
    if n_samples < 1:
        raise ValueError("n_samples must be ≥ 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_samples):
        s = generate_sample(cfg, i)
        rel = f"images/{s.id}.png"
        Image.fromarray(quantize(s.image), mode="L").save(out / rel, format="PNG")
        records.append({"id": s.id, "image": rel, "dots": [list(d) for d in s.annotation.dots]})
    with open(out / "annotations.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_samples": n_samples,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "samples": [{"id": r["id"], "count": len(r["dots"])} for r in records],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise DatasetError(f"missing manifest: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt manifest {path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported format_version {manifest.get('format_version')}")
    return manifest


def load_dataset(root) -> list[Sample]:
    root = Path(root)
    manifest = read_manifest(root)
    ann_path = root / "annotations.jsonl"
    if not ann_path.is_file():
        raise DatasetError(f"missing annotations: {ann_path}")
    samples = []
    with open(ann_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid, rel, dots = rec["id"], rec["image"], rec["dots"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{ann_path}:{lineno}: malformed record ({exc})") from exc
            img_path = root / rel
            if not img_path.is_file():
                raise DatasetError(f"missing image file: {img_path}")
            try:
                with Image.open(img_path) as im:
                    if im.mode != "L":
                        raise DatasetError(f"{img_path}: expected 8-bit grayscale, got {im.mode}")
                    img = np.asarray(im, dtype=np.float64) / 255.0
            except OSError as exc:
                raise DatasetError(f"unreadable image file {img_path}: {exc}") from exc
            ann = DotAnnotation(tuple((x, y) for x, y in dots))
            try:
                ann.check_bounds(*img.shape)
            except ValueError as exc:
                raise DatasetError(f"{ann_path}:{lineno}: {exc}") from exc
            samples.append(Sample(id=sid, image=img, annotation=ann))

    listed = manifest.get("samples")
    if listed is not None:
        if [s["id"] for s in listed] != [s.id for s in samples]:
            raise DatasetError(f"{root}: annotation ids disagree with the manifest")
        for entry, s in zip(listed, samples):
            if entry["count"] != s.count:
                raise DatasetError(f"{s.id}: {s.count} dots but manifest says {entry['count']}")
    if len(samples) != manifest.get("n_samples"):
        raise DatasetError(f"{root}: {len(samples)} samples, manifest says "
                           f"{manifest.get('n_samples')}")
    return samples


def split(samples: list, val_fraction: float, mode: str = "head",
          seed: Optional[int] = None) -> tuple[list, list]:
    """Deterministic train/validation split; training gets ``ceil(n * (1 - f))`` samples.

    ``mode="head"`` keeps the original order, ``mode="shuffled"`` permutes with ``seed`` first.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(samples)
    n_train = math.ceil(round(n * (1.0 - val_fraction), 9))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"split of {n} samples at val_fraction {val_fraction} leaves a side empty")
    if mode == "head":
        order = list(range(n))
    elif mode == "shuffled":
        order = np.random.default_rng(seed).permutation(n).tolist()
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


def dataset_checksum(root) -> str:
    """SHA-256 over every dataset file's relative path and bytes, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    files = sorted(p for p in root.rglob("*") if p.is_file())
    for p in files:
        h.update(p.relative_to(root).as_posix().encode("utf-8") + b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()
