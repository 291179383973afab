"""Minimal reverse-mode array engine for the counting network."""
import contextlib

from . import kernels
from .gradcheck import analytic_grad, grad_check, numeric_grad
from .ops import (
    add,
    affine,
    channel_weighted_sum,
    conv2d,
    detach,
    global_avg_pool,
    l1_loss,
    maxpool2x2,
    mean,
    minmax_normalize,
    mul,
    prelu,
    reshape,
    smooth_l1_loss,
    sub,
    sum,
)
from .optim import Adam, AdamState, adam_step
from .tensor import (
    NonFiniteError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    current_tape,
    is_grad_enabled,
    no_grad,
)


@contextlib.contextmanager
def sequential():
    """Pin BLAS to one thread so results are bit-reproducible run to run."""
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


__all__ = [
    "Adam", "AdamState", "NonFiniteError", "Tape", "Tensor", "adam_step", "add", "affine",
    "analytic_grad", "as_tensor", "backward", "channel_weighted_sum", "conv2d",
    "current_tape", "detach", "global_avg_pool", "grad_check", "is_grad_enabled",
    "kernels", "l1_loss", "maxpool2x2", "mean", "minmax_normalize", "mul", "no_grad",
    "numeric_grad", "prelu", "reshape", "sequential", "smooth_l1_loss", "sub", "sum",
]
