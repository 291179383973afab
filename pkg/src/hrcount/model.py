"""VGG-style counting network with a GAP + linear backend, its CAM, and checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import (
    Tensor,
    affine,
    channel_weighted_sum,
    conv2d,
    detach,
    global_avg_pool,
    maxpool2x2,
    prelu,
)

CHECKPOINT_MAGIC = b"HRC1\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    block_channels: tuple[int, ...] = (16, 32, 64, 64)
    convs_per_block: int = 2
    kernel_size: int = 3
    pools_after_blocks: tuple[int, ...] = (1, 2, 3)
    prelu_init: float = 0.25
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        object.__setattr__(self, "pools_after_blocks",
                           tuple(sorted(int(b) for b in self.pools_after_blocks)))
        self.validate()

    def validate(self) -> None:
        nb = len(self.block_channels)
        if nb < 1:
            raise ValueError("need at least one conv block")
        if any(c < 1 for c in self.block_channels) or self.in_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.convs_per_block < 1:
            raise ValueError("convs_per_block must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if len(set(self.pools_after_blocks)) != len(self.pools_after_blocks):
            raise ValueError("duplicate entries in pools_after_blocks")
        if any(not 1 <= b <= nb for b in self.pools_after_blocks):
            raise ValueError(f"pools_after_blocks must name blocks 1..{nb}")

    @property
    def stride(self) -> int:
        """Downscale factor between input and CAM resolution."""
        return 2 ** len(self.pools_after_blocks)

    @property
    def feature_channels(self) -> int:
        return self.block_channels[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_channels"] = list(self.block_channels)
        d["pools_after_blocks"] = list(self.pools_after_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardOutput:
    count_pred: Tensor  # (N, 1)
    last_features: Tensor  # (N, C, H/stride, W/stride)


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    cin, k = cfg.in_channels, cfg.kernel_size
    for b, cout in enumerate(cfg.block_channels, start=1):
        for j in range(1, cfg.convs_per_block + 1):
            prefix = f"block{b}.conv{j}"
            shapes.append((f"{prefix}.weight", (cout, cin, k, k)))
            shapes.append((f"{prefix}.bias", (cout,)))
            shapes.append((f"{prefix}.prelu", (cout,)))
            cin = cout
    shapes.append(("head.weight", (1, cin)))
    shapes.append(("head.bias", (1,)))
    return shapes


@dataclass
class CountNet:
    """Conv blocks (conv -> PReLU, optional 2x2 pool per block), GAP, then a 1-output linear layer."""

    config: ModelConfig
    params: dict[str, Tensor] = field(repr=False)

    def __post_init__(self):
        expected = _param_shapes(self.config)
        if [n for n, _ in expected] != list(self.params):
            raise ValueError("parameter names do not match the config")
        for name, shape in expected:
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape} != expected {shape}")

    @property
    def head_weight(self) -> Tensor:
        return self.params["head.weight"]

    @property
    def head_bias(self) -> Tensor:
        return self.params["head.bias"]

    @property
    def stride(self) -> int:
        return self.config.stride

    @property
    def dtype(self):
        return self.head_weight.dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def conv_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("block")}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def astype(self, dtype) -> "CountNet":
        return CountNet(self.config, {k: Tensor(v.data.astype(dtype), requires_grad=True)
                                      for k, v in self.params.items()})

    def copy(self) -> "CountNet":
        return self.astype(self.dtype)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data[...] = v

    def forward(self, images) -> ForwardOutput:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        if x.ndim == 3:
            x = x.reshape(x.shape[0], 1, *x.shape[1:])
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected (N, {self.config.in_channels}, H, W) images, got {x.shape}")
        s = self.stride
        if x.shape[2] % s or x.shape[3] % s:
            raise ValueError(f"image extents {x.shape[2:]} not divisible by CAM stride {s}")
        pad = self.config.kernel_size // 2
        cfg = self.config
        for b in range(1, len(cfg.block_channels) + 1):
            for j in range(1, cfg.convs_per_block + 1):
                p = f"block{b}.conv{j}"
                x = conv2d(x, self.params[p + ".weight"], self.params[p + ".bias"], 1, pad)
                x = prelu(x, self.params[p + ".prelu"])
            if b in cfg.pools_after_blocks:
                x = maxpool2x2(x)
        count = affine(global_avg_pool(x), self.head_weight, self.head_bias)
        return ForwardOutput(count_pred=count, last_features=x)

    __call__ = forward


def init_model(config: ModelConfig, dtype=np.float32) -> CountNet:
    """He-normal weights from ``config.seed``, zero biases, PReLU slopes at ``prelu_init``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in _param_shapes(config):
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            arr = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif name.endswith(".prelu"):
            arr = np.full(shape, config.prelu_init)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return CountNet(config, params)


def compute_cam(last_features: Tensor, weight: Tensor) -> Tensor:
    """Class activation map ``sum_c w[c] * F[n, c]`` as an (N, h, w) tensor.

    The backend weight enters through :func:`detach`, so gradients of anything
    computed from the CAM reach the convolution layers but never ``w``.
    """
    w = weight if not isinstance(weight, Tensor) else detach(weight)
    return channel_weighted_sum(last_features, w)


def save_checkpoint(net: CountNet, path, meta: Optional[dict] = None) -> None:
    directory = []
    offset = 0
    blobs = []
    for name, t in net.params.items():
        blob = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": net.config.to_dict(),
        "params": directory,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint_header(path) -> dict:
    return _read(path)[0]


def _read(path):
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: bad magic, not an HRC1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    if len(raw) < pos + 4:
        raise CheckpointError(f"{path}: truncated header length")
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('format_version')}")
    return header, raw[pos + hlen:]


def load_checkpoint(path) -> CountNet:
    header, body = _read(path)
    try:
        config = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid model config ({exc})") from exc
    expected = dict(_param_shapes(config))
    params = {}
    for entry in header["params"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), entry["offset"]
        if expected.get(name) != shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {shape}, "
                                  f"config expects {expected.get(name)}")
        nbytes = 4 * int(np.prod(shape))
        if off + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated data for {name}")
        arr = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
        params[name] = Tensor(arr.astype(np.float32), requires_grad=True)
    if list(params) != list(expected):
        raise CheckpointError(f"{path}: parameter directory does not match config")
    return CountNet(config, params)
