import numpy as np
import pytest

from hrcount.engine import Tensor
from hrcount.heatmap import GamConfig, render_gam
from hrcount.model import CountNet, ModelConfig, init_model

MICRO = ModelConfig(in_channels=1, block_channels=(2, 3), convs_per_block=2,
                    pools_after_blocks=(1, 2), seed=0)


def micro_net(seed: int, dtype=np.float64) -> CountNet:
    """2-block, stride-4 net small enough for exhaustive finite differences."""
    net = init_model(ModelConfig(**{**MICRO.to_dict(), "seed": seed}), dtype=dtype)
    rng = np.random.default_rng(1000 + seed)
    # non-trivial biases and slopes so every code path carries signal
    for name, t in net.params.items():
        if name.endswith(".bias") or name.endswith(".prelu"):
            t.data[...] = rng.uniform(-0.3, 0.3, t.shape) if name.endswith(".bias") \
                else rng.uniform(0.05, 0.5, t.shape)
    return net


def with_param(net: CountNet, name: str, value: Tensor) -> CountNet:
    params = dict(net.params)
    params[name] = value
    return CountNet(net.config, params)


def random_dots(rng, n, h, w):
    return [(float(rng.uniform(0, w)), float(rng.uniform(0, h))) for _ in range(n)]


def random_gam(rng, n_dots, extents, stride):
    return render_gam(random_dots(rng, n_dots, *extents), extents,
                      GamConfig(sigma=1.5, downscale=stride)).values


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
