"""Heatmap-regulated training: count L1 plus normalised CAM-vs-GAM smooth-L1.

The heatmap term reaches the convolution layers only; the backend linear
layer is trained by the count term alone.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import Adam, NonFiniteError, Tensor, backward, l1_loss, no_grad, smooth_l1_loss
from .heatmap import ActivationMap, GamConfig, normalize_map, render_gam
from .metrics import EvalResult, cam_mass_ratio, evaluate
from .model import CountNet, ForwardOutput, compute_cam

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch, self.batch = epoch, batch
        msg = f"non-finite loss at epoch {epoch}, batch {batch}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    lr_drop_epoch: int = 10
    lr_drop_factor: float = 0.1
    epochs: int = 100
    passes_per_epoch: int = 10
    batch_size: int = 4
    lambda_hr: float = 1.0
    gam: GamConfig = field(default_factory=GamConfig)
    seed: int = 0
    norm_eps: float = 1e-6
    cam_radius: Optional[float] = None  # defaults to the CAM stride

    def __post_init__(self):
        if not (self.lr > 0 and self.lr_drop_factor > 0):
            raise ValueError("learning rate and drop factor must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.lambda_hr < 0:
            raise ValueError("lambda_hr must be >= 0")
        if min(self.epochs, self.passes_per_epoch, self.batch_size) < 1:
            raise ValueError("epochs, passes_per_epoch and batch_size must be >= 1")
        if self.lr_drop_epoch < 0:
            raise ValueError("lr_drop_epoch must be >= 0")

    @property
    def method(self) -> str:
        return "hr" if self.lambda_hr > 0 else "baseline"

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        return self.lr if epoch <= self.lr_drop_epoch else self.lr * self.lr_drop_factor

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gam"] = asdict(self.gam)
        return d


@dataclass
class EpochRecord:
    epoch: int
    count_loss: float
    heatmap_loss: float
    lr: float
    val: EvalResult
    val_cam_mass_ratio: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["val"] = self.val.to_dict()
        return d


@dataclass
class TrainReport:
    method: str
    config: dict
    epochs: list[EpochRecord]
    selected_epoch: int
    steps: int
    wall_time: float = 0.0

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.selected_epoch - 1]

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "method": self.method,
            "config": self.config,
            "selected_epoch": self.selected_epoch,
            "steps": self.steps,
            "best_val": self.best.val.to_dict(),
            "epochs": [e.to_dict() for e in self.epochs],
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def write(self, out_dir) -> None:
        """Write ``report.json`` and ``curves.csv``; timing is left out so reruns are byte-identical."""
        out = Path(out_dir)
        (out / "report.json").write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "count_loss", "heatmap_loss", "val_mae", "val_rmse", "lr"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.count_loss), repr(e.heatmap_loss),
                            repr(e.val.mae), repr(e.val.rmse), repr(e.lr)])


def _gam_batch(gam, n: int) -> np.ndarray:
    if isinstance(gam, ActivationMap):
        gam = [gam]
    if isinstance(gam, (list, tuple)):
        gam = np.stack([g.values if isinstance(g, ActivationMap) else np.asarray(g) for g in gam])
    gam = np.asarray(gam, dtype=np.float64)
    if gam.ndim == 2:
        gam = gam[None]
    if gam.shape[0] != n:
        raise ValueError(f"{gam.shape[0]} GAMs for a batch of {n}")
    return gam


def hr_loss_terms(output: ForwardOutput, target_count, gam, w: Tensor, lambda_hr: float,
                  eps: float = 1e-6, cam_stats=None) -> tuple[Tensor, Optional[Tensor]]:
    """Count term and (when ``lambda_hr > 0``) the unweighted heatmap term.

    ``cam_stats`` pins the (min, max) used to normalise the CAM; by default they
    are measured per map and held constant on the tape.
    """
    pred = output.count_pred
    n = pred.shape[0]
    target = np.asarray(target_count, dtype=pred.dtype).reshape(n, 1)
    count_term = l1_loss(pred, target)
    if lambda_hr <= 0:
        return count_term, None
    feats = output.last_features
    gamv = _gam_batch(gam, n)
    if gamv.shape[1:] != feats.shape[2:]:
        raise ValueError(f"GAM resolution {gamv.shape[1:]} != feature resolution {feats.shape[2:]}")
    cam = compute_cam(feats, w)
    lo, hi = cam_stats if cam_stats is not None else (None, None)
    cam_n = normalize_map(cam, eps, lo=lo, hi=hi)
    gam_n = normalize_map(gamv, eps).astype(pred.dtype)
    return count_term, smooth_l1_loss(cam_n, gam_n)


def hr_loss(output: ForwardOutput, target_count, gam, w: Tensor, lambda_hr: float,
            eps: float = 1e-6, cam_stats=None) -> Tensor:
    count_term, heat_term = hr_loss_terms(output, target_count, gam, w, lambda_hr, eps, cam_stats)
    if heat_term is None:
        return count_term
    return count_term + heat_term * lambda_hr


def _heatmap_monitor(features: np.ndarray, w: np.ndarray, gam_n: np.ndarray, eps: float) -> float:
    """Tape-free value of the heatmap term, for logging baseline runs."""
    cam = np.tensordot(features.astype(np.float64), w.reshape(-1).astype(np.float64),
                       axes=([1], [0]))
    d = np.abs(normalize_map(cam, eps) - gam_n)
    return float(np.where(d < 1.0, 0.5 * d * d, d - 0.5).mean())


def _stack_images(samples: Sequence, dtype) -> np.ndarray:
    return np.stack([np.asarray(s.image) for s in samples])[:, None].astype(dtype)


def precompute_gams(samples: Sequence, cfg: GamConfig) -> np.ndarray:
    return np.stack([render_gam(s.annotation, s.image.shape, cfg).values for s in samples])


def evaluate_model(net: CountNet, samples: Sequence, cam_radius: Optional[float] = None,
                   batch_size: int = 32, rounded: bool = False,
                   norm_eps: float = 1e-6) -> tuple[EvalResult, float]:
    """Metrics over ``samples`` plus the mean CAM mass ratio, without tape recording.

    The mass ratio is measured on each min-max normalised CAM, so a constant
    offset absorbed by the backend bias does not register as spread.
    """
    if not samples:
        raise ValueError("evaluate_model needs at least one sample")
    radius = float(net.stride if cam_radius is None else cam_radius)
    preds, ratios = [], []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            out = net(_stack_images(chunk, net.dtype))
            cams = compute_cam(out.last_features, net.head_weight).data
            preds.extend(out.count_pred.data.reshape(-1).tolist())
            for s, cam in zip(chunk, cams):
                # compactness of the heatmap as compared in the loss and rendered in overlays
                cam = normalize_map(cam.astype(np.float64), norm_eps)
                amap = ActivationMap(cam, net.stride, s.image.shape)
                ratios.append(cam_mass_ratio(amap, s.annotation.dots, radius))
    targets = [s.count for s in samples]
    pct = sum(targets) > 0
    return (evaluate(actual=preds, target=targets, rounded=rounded, percentages=pct),
            float(np.mean(ratios)))


def batch_order(rng: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(net: CountNet, train_samples: Sequence, val_samples: Sequence, cfg: TrainConfig,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> tuple[CountNet, TrainReport]:
    """Train a copy of ``net``; return the epoch with the lowest validation MAE (earliest on ties)."""
    if not train_samples or not val_samples:
        raise ValueError("train and validation splits must be non-empty")
    start = time.perf_counter()
    work = net.copy()
    stride = work.stride
    for s in list(train_samples) + list(val_samples):
        h, w = s.image.shape
        if h % stride or w % stride:
            raise ValueError(f"sample {s.id}: extents {h}x{w} not divisible by stride {stride}")
    gam_cfg = replace(cfg.gam, downscale=stride) if cfg.gam.downscale != stride else cfg.gam
    dtype = work.dtype
    images = _stack_images(train_samples, dtype)
    targets = np.array([s.count for s in train_samples], dtype=dtype)
    gams = precompute_gams(train_samples, gam_cfg)
    gams_n = normalize_map(gams, cfg.norm_eps)

    opt = Adam(work.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    records: list[EpochRecord] = []
    best_mae, best_epoch, best_state = math.inf, 0, None
    steps = 0
    head_w = work.head_weight
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = cfg.lr_at(epoch)
        c_sum = h_sum = 0.0
        n_batches = 0
        for _ in range(cfg.passes_per_epoch):
            for b, idx in enumerate(batch_order(rng, len(train_samples), cfg.batch_size)):
                try:
                    out = work(images[idx])
                    c_term, h_term = hr_loss_terms(out, targets[idx], gams[idx], head_w,
                                                   cfg.lambda_hr, cfg.norm_eps)
                    loss = c_term if h_term is None else c_term + h_term * cfg.lambda_hr
                    opt.zero_grad()
                    backward(loss)
                    opt.step()
                except NonFiniteError as exc:
                    raise TrainingDiverged(epoch, b, str(exc)) from exc
                c_val = float(c_term.data)
                if h_term is None:
                    h_val = _heatmap_monitor(out.last_features.data, head_w.data, gams_n[idx],
                                             cfg.norm_eps)
                else:
                    h_val = float(h_term.data)
                if not (math.isfinite(c_val) and math.isfinite(h_val)):
                    raise TrainingDiverged(epoch, b)
                c_sum += c_val
                h_sum += h_val
                n_batches += 1
                steps += 1
        val, ratio = evaluate_model(work, val_samples, cfg.cam_radius, norm_eps=cfg.norm_eps)
        rec = EpochRecord(epoch, c_sum / n_batches, h_sum / n_batches, opt.lr, val, ratio)
        records.append(rec)
        logger.info("epoch %d  count %.4f  heat %.4f  val MAE %.3f  lr %.1e",
                    epoch, rec.count_loss, rec.heatmap_loss, val.mae, rec.lr)
        if on_epoch is not None:
            on_epoch(rec)
        if val.mae < best_mae:
            best_mae, best_epoch, best_state = val.mae, epoch, work.state()
    work.load_state(best_state)
    wall = time.perf_counter() - start
    logger.info("%s run: %d steps in %.1fs, selected epoch %d", cfg.method, steps, wall, best_epoch)
    report = TrainReport(method=cfg.method, config=cfg.to_dict(), epochs=records,
                         selected_epoch=best_epoch, steps=steps, wall_time=wall)
    return work, report
