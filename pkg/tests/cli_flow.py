"""A small end-to-end CLI session used by the CLI and acceptance tests."""
import contextlib
import io
from pathlib import Path

from hrcount.cli import main

TRAIN_FLAGS = ["--epochs", "2", "--passes-per-epoch", "1", "--batch-size", "4",
               "--block-channels", "4,4,8,8", "--lr", "1e-3"]


def run(argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main([str(a) for a in argv])
    return code, buf.getvalue()


def session(root: Path, lambda_hr="1") -> dict:
    """gen-data, train, eval, render (CAM and GAM) under ``root``; returns stdout per step."""
    d, r, o = root / "data", root / "run", root / "render"
    outs = {}
    for name, argv in [
        ("gen-data", ["gen-data", "--out", d, "--n", "10", "--seed", "2", "--height", "32",
                      "--width", "32", "--count-max", "5", "--radius-max", "3"]),
        ("train", ["train", "--data", d, "--out", r, "--seed", "1", "--lambda-hr", lambda_hr]
         + TRAIN_FLAGS),
        ("eval", ["eval", "--checkpoint", r / "model.hrc", "--data", d]),
        ("render-cam", ["render", "--image", d / "images" / "000000.png", "--out", o / "cam.png",
                        "--checkpoint", r / "model.hrc"]),
        ("render-gam", ["render", "--image", d / "images" / "000000.png", "--out", o / "gam.png",
                        "--gam", "--checkpoint", r / "model.hrc"]),
    ]:
        code, out = run(argv)
        if code != 0:
            raise AssertionError(f"{name} exited {code}")
        outs[name] = out
    return outs


def snapshot(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}
