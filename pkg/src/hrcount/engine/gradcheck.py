"""Central finite-difference checks for the engine's backward rules."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .tensor import Tensor, backward, no_grad


def _scalar(y: Tensor) -> float:
    if not isinstance(y, Tensor) or y.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    return float(y.data.reshape(-1)[0])


def numeric_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    res = out.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _scalar(f(Tensor(x.copy())))
            flat[i] = orig - eps
            fm = _scalar(f(Tensor(x.copy())))
            flat[i] = orig
            res[i] = (fp - fm) / (2 * eps)
    return out


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    xt = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    y = f(xt)
    _scalar(y)
    if y._node is None:
        # f does not depend on anything on the tape
        return np.zeros_like(xt.data)
    backward(y)
    return xt.grad


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
               exclude: Optional[np.ndarray] = None) -> float:
    """Worst relative error between backward() and central differences.

    The relative error per coordinate is ``|a - b| / max(|a|, |b|, 1e-8)``.
    ``exclude`` is a boolean mask of coordinates to skip (points near a kink).
    Always evaluated in float64.
    """
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    a = analytic_grad(f, x)
    b = numeric_grad(f, x, eps)
    err = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    if exclude is not None:
        err = np.where(np.broadcast_to(exclude, err.shape), 0.0, err)
    return float(err.max()) if err.size else 0.0
