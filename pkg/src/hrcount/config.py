"""Run configuration: one flat key registry shared by config files and CLI flags.

Config files hold ``key = value`` lines; ``#`` starts a comment, blank lines
are ignored and unknown keys are errors. A value set by a command-line flag
overrides the file, which overrides the built-in default.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

from .data import SyntheticConfig
from .heatmap import GamConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


def _optional(cast: Callable) -> Callable:
    def parse(text):
        if text is None or str(text).strip().lower() in ("", "none", "auto"):
            return None
        return cast(text)
    return parse


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str
    group: str


_S = SyntheticConfig()
_M = ModelConfig()
_T = TrainConfig()
_G = GamConfig()

KEYS: dict[str, Key] = {k.name: k for k in [
    # data generation
    Key("height", int, _S.height, "image height in pixels", "data"),
    Key("width", int, _S.width, "image width in pixels", "data"),
    Key("count_min", int, _S.count_range[0], "fewest objects per image", "data"),
    Key("count_max", int, _S.count_range[1], "most objects per image", "data"),
    Key("radius_min", float, _S.radius_range[0], "smallest object radius", "data"),
    Key("radius_max", float, _S.radius_range[1], "largest object radius", "data"),
    Key("intensity_min", float, _S.intensity_range[0], "lowest regular object intensity", "data"),
    Key("intensity_max", float, _S.intensity_range[1], "highest regular object intensity", "data"),
    Key("hard_object_fraction", float, _S.hard_object_fraction,
        "probability that an object is low-contrast", "data"),
    Key("hard_intensity_min", float, _S.hard_intensity_range[0],
        "lowest low-contrast intensity", "data"),
    Key("hard_intensity_max", float, _S.hard_intensity_range[1],
        "highest low-contrast intensity", "data"),
    Key("distractor_min", int, _S.distractor_count_range[0], "fewest distractors", "data"),
    Key("distractor_max", int, _S.distractor_count_range[1], "most distractors", "data"),
    Key("background_level", float, _S.background_level, "peak background brightness", "data"),
    Key("background_smoothness", float, _S.background_smoothness,
        "background blur sigma", "data"),
    Key("min_separation", float, _S.min_separation, "minimum object center distance", "data"),
    Key("data_seed", int, _S.seed, "dataset seed", "data"),
    # model
    Key("in_channels", int, _M.in_channels, "input channels", "model"),
    Key("block_channels", _int_list, _M.block_channels, "channels per block, comma-separated",
        "model"),
    Key("convs_per_block", int, _M.convs_per_block, "convolutions per block", "model"),
    Key("kernel_size", int, _M.kernel_size, "convolution kernel size", "model"),
    Key("pools_after_blocks", _int_list, _M.pools_after_blocks,
        "1-based blocks followed by 2x2 max-pooling, comma-separated", "model"),
    Key("prelu_init", float, _M.prelu_init, "initial PReLU slope", "model"),
    Key("model_seed", _optional(int), None, "weight init seed (default: train_seed)", "model"),
    # training
    Key("lr", float, _T.lr, "initial learning rate", "train"),
    Key("weight_decay", float, _T.weight_decay, "L2 weight decay", "train"),
    Key("lr_drop_epoch", int, _T.lr_drop_epoch, "last epoch at the initial learning rate",
        "train"),
    Key("lr_drop_factor", float, _T.lr_drop_factor, "learning rate multiplier after the drop",
        "train"),
    Key("epochs", int, _T.epochs, "training epochs", "train"),
    Key("passes_per_epoch", int, _T.passes_per_epoch, "passes over the training set per epoch",
        "train"),
    Key("batch_size", int, _T.batch_size, "mini-batch size", "train"),
    Key("lambda_hr", float, _T.lambda_hr, "heatmap loss weight (0 trains the baseline)",
        "train"),
    Key("train_seed", int, _T.seed, "shuffling seed", "train"),
    Key("val_fraction", float, 0.1, "validation share of the dataset", "train"),
    Key("split_mode", str, "head", "validation split: head or shuffled", "train"),
    Key("split_seed", int, 0, "seed for the shuffled split", "train"),
    Key("norm_eps", float, _T.norm_eps, "min-max normalisation epsilon", "train"),
    Key("cam_radius", _optional(float), None, "CAM mass ratio radius (default: stride)",
        "train"),
    Key("sigma", float, _G.sigma, "GAM Gaussian sigma", "train"),
    Key("kernel_radius", _optional(int), None, "GAM kernel truncation radius (default 3 sigma)",
        "train"),
]}


def parse_value(name: str, text) -> Any:
    if name not in KEYS:
        raise ConfigError(f"unknown config key {name!r}")
    try:
        return KEYS[name].parse(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {text!r} ({exc})") from exc


def read_config_file(path) -> dict[str, Any]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(key, value)
    return out


class RunConfig:
    """Resolved settings; ``values`` maps every registry key to its value."""

    def __init__(self, values: Optional[dict[str, Any]] = None):
        self.values = {k.name: k.default for k in KEYS.values()}
        for key, value in (values or {}).items():
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            self.values[key] = value

    @classmethod
    def resolve(cls, file: Optional[str] = None,
                overrides: Optional[dict[str, Any]] = None) -> "RunConfig":
        merged = read_config_file(file) if file else {}
        merged.update(overrides or {})
        return cls(merged)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def synthetic(self) -> SyntheticConfig:
        v = self.values
        try:
            return SyntheticConfig(
                height=v["height"], width=v["width"],
                count_range=(v["count_min"], v["count_max"]),
                radius_range=(v["radius_min"], v["radius_max"]),
                intensity_range=(v["intensity_min"], v["intensity_max"]),
                hard_object_fraction=v["hard_object_fraction"],
                hard_intensity_range=(v["hard_intensity_min"], v["hard_intensity_max"]),
                distractor_count_range=(v["distractor_min"], v["distractor_max"]),
                background_level=v["background_level"],
                background_smoothness=v["background_smoothness"],
                min_separation=v["min_separation"], seed=v["data_seed"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model(self) -> ModelConfig:
        v = self.values
        seed = v["train_seed"] if v["model_seed"] is None else v["model_seed"]
        try:
            return ModelConfig(
                in_channels=v["in_channels"], block_channels=tuple(v["block_channels"]),
                convs_per_block=v["convs_per_block"], kernel_size=v["kernel_size"],
                pools_after_blocks=tuple(v["pools_after_blocks"]),
                prelu_init=v["prelu_init"], seed=seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train(self) -> TrainConfig:
        v = self.values
        try:
            gam = GamConfig(sigma=v["sigma"], kernel_radius=v["kernel_radius"])
            return TrainConfig(
                lr=v["lr"], weight_decay=v["weight_decay"], lr_drop_epoch=v["lr_drop_epoch"],
                lr_drop_factor=v["lr_drop_factor"], epochs=v["epochs"],
                passes_per_epoch=v["passes_per_epoch"], batch_size=v["batch_size"],
                lambda_hr=v["lambda_hr"], gam=gam, seed=v["train_seed"],
                norm_eps=v["norm_eps"], cam_radius=v["cam_radius"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}
