"""Command-line interface: ``hrcount gen-data | train | eval | render``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import render as render_mod
from .config import KEYS, ConfigError, RunConfig, parse_value
from .data import DatasetError, PlacementError, generate_dataset, load_dataset, split
from .engine import no_grad, sequential
from .heatmap import GamConfig, normalize_map, render_gam
from .metrics import EvalResult
from .model import (CheckpointError, compute_cam, init_model, load_checkpoint,
                    read_checkpoint_header, save_checkpoint)
from .training import TrainingDiverged, evaluate_model, train

CHECKPOINT_NAME = "model.hrc"
EVAL_HEADER = EvalResult.CSV_HEADER + ",cam_mass_ratio"


class CliError(RuntimeError):
    pass


def _add_keys(parser: argparse.ArgumentParser, groups: Sequence[str],
              skip: Sequence[str] = ()) -> None:
    for group in groups:
        g = parser.add_argument_group(f"{group} settings")
        for key in KEYS.values():
            if key.group != group or key.name in skip:
                continue
            g.add_argument("--" + key.name.replace("_", "-"), dest="key_" + key.name,
                           default=argparse.SUPPRESS, metavar="V",
                           help=f"{key.help} (default {key.default})")


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for name, value in vars(args).items():
        if name.startswith("key_"):
            key = name[4:]
            out[key] = parse_value(key, value)
    return out


def _run_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig.resolve(getattr(args, "config", None), _overrides(args))


def csv_row_values(ev: EvalResult, ratio: float) -> dict:
    """The printed row as numbers: metrics to 2 decimals, the mass ratio to 4."""
    names = EVAL_HEADER.split(",")[1:]
    values = [round(x, 2) for x in ev.csv_fields()] + [round(ratio, 4)]
    return dict(zip(names, values))


def format_csv_row(method: str, row: dict) -> str:
    cells = [f"{v:.4f}" if k == "cam_mass_ratio" else f"{v:.2f}" for k, v in row.items()]
    return ",".join([method] + cells)


def cmd_gen_data(args: argparse.Namespace) -> int:
    rc = _run_config(args)
    cfg = rc.synthetic()
    manifest = generate_dataset(cfg, args.n, args.out)
    total = sum(s["count"] for s in manifest["samples"])
    print(f"wrote {args.n} samples ({total} objects) to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    rc = _run_config(args)
    samples = load_dataset(args.data)
    tr, va = split(samples, rc["val_fraction"], rc["split_mode"], rc["split_seed"])
    mcfg = rc.model()
    tcfg = rc.train()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = init_model(mcfg)
    best, report = train(net, tr, va, tcfg)
    meta = {"method": report.method, "selected_epoch": report.selected_epoch,
            "run_config": rc.to_dict()}
    save_checkpoint(best, out / CHECKPOINT_NAME, meta=meta)
    report.write(out)
    b = report.best
    print(f"{report.method}: selected epoch {report.selected_epoch}, "
          f"val MAE {b.val.mae:.4f}, checkpoint {out / CHECKPOINT_NAME}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    net = load_checkpoint(args.checkpoint)
    meta = read_checkpoint_header(args.checkpoint).get("meta", {})
    method = args.method or meta.get("method", "model")
    samples = load_dataset(args.data)
    ev, ratio = evaluate_model(net, samples, cam_radius=args.cam_radius, rounded=args.rounded)
    row = csv_row_values(ev, ratio)
    print(EVAL_HEADER)
    print(format_csv_row(method, row))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    result = {"method": method, "checkpoint": str(args.checkpoint), "data": str(args.data),
              "rounded": bool(args.rounded), "metrics": ev.to_dict(), "cam_mass_ratio": ratio, "row": row}
    (out / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")
    return 0


def _dots_from_dataset(image: Path) -> Optional[list]:
    """Dots for ``image`` from the annotations of the dataset it belongs to, if any."""
    for root in (image.parent.parent, image.parent):
        ann = root / "annotations.jsonl"
        if not ann.is_file():
            continue
        with open(ann, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if (root / rec["image"]).resolve() == image.resolve():
                    return [tuple(d) for d in rec["dots"]]
    return None


def _parse_dots(text: str) -> list:
    dots = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            x, y = (float(v) for v in part.split(","))
        except ValueError:
            raise CliError(f"bad dot {part!r}; expected 'x,y;x,y;...'") from None
        dots.append((x, y))
    return dots


def cmd_render(args: argparse.Namespace) -> int:
    image = Path(args.image)
    if not image.is_file():
        raise CliError(f"image not found: {image}")
    gray = render_mod.load_gray(image)
    if args.gam:
        if args.dots is not None:
            dots = _parse_dots(args.dots)
        else:
            dots = _dots_from_dataset(image)
            if dots is None:
                raise CliError(f"no annotations found for {image}; pass --dots")
        stride = args.stride
        if args.checkpoint:
            stride = load_checkpoint(args.checkpoint).stride
        cfg = GamConfig(sigma=args.sigma, kernel_radius=args.kernel_radius, downscale=stride)
        heat = normalize_map(render_gam(dots, gray.shape, cfg).values)
    else:
        if not args.checkpoint:
            raise CliError("render needs --checkpoint (CAM) or --gam")
        net = load_checkpoint(args.checkpoint)
        stride = net.stride
        with no_grad():
            out = net(gray[None, None].astype(net.dtype))
            cam = compute_cam(out.last_features, net.head_weight).data[0]
        heat = normalize_map(cam.astype(np.float64))
    rgb = render_mod.overlay(gray, heat, stride)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    render_mod.save_png(rgb, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hrcount",
                                description="Object counting with heatmap regulation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n", type=int, required=True, help="number of samples")
    g.add_argument("--seed", dest="key_data_seed", default=argparse.SUPPRESS,
                   help="dataset seed (default 0)")
    g.add_argument("--config", help="config file")
    _add_keys(g, ["data"], skip=["data_seed"])
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a counting model")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", dest="key_train_seed", default=argparse.SUPPRESS,
                   help="training and init seed (default 0)")
    t.add_argument("--config", help="config file")
    _add_keys(t, ["model", "train"], skip=["train_seed"])
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="directory for eval.json (default: next to the checkpoint)")
    e.add_argument("--method", help="row label (default: from the checkpoint)")
    e.add_argument("--cam-radius", type=float, default=None,
                   help="CAM mass ratio radius (default: stride)")
    e.add_argument("--rounded", action="store_true", help="round predictions first")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="overlay a CAM or GAM heatmap on an image")
    r.add_argument("--image", required=True)
    r.add_argument("--out", required=True, help="output PNG")
    r.add_argument("--checkpoint", help="model whose CAM is rendered (or whose stride the GAM uses)")
    r.add_argument("--gam", action="store_true", help="render the ground-truth GAM instead")
    r.add_argument("--dots", help="'x,y;x,y;...' dots (default: from the dataset annotations)")
    r.add_argument("--sigma", type=float, default=GamConfig().sigma)
    r.add_argument("--kernel-radius", type=int, default=None)
    r.add_argument("--stride", type=int, default=8, help="GAM stride without a checkpoint")
    r.set_defaults(func=cmd_render)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with sequential():
            return args.func(args)
    except ConfigError as exc:
        parser.exit(2, f"hrcount: error: {exc}\n")
    except (CliError, DatasetError, CheckpointError, PlacementError, TrainingDiverged,
            ValueError, OSError) as exc:
        print(f"hrcount: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
